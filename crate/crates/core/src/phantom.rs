//! Deterministic synthetic volumes for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::volume::{Dims3, Mask3, Volume3};

/// Smooth phantom: the sum of three low-frequency 3D Gaussian bumps on an
/// n^3 grid. Deterministic; intensities lie in (0, ~1.9).
pub fn smooth_phantom(n: usize) -> Volume3 {
    let s = n as f64;
    // (center, width, amplitude), all relative to the grid size.
    let bumps: [([f64; 3], f64, f64); 3] = [
        ([0.35 * s, 0.40 * s, 0.50 * s], 0.18 * s, 1.0),
        ([0.65 * s, 0.55 * s, 0.45 * s], 0.22 * s, 0.8),
        ([0.50 * s, 0.60 * s, 0.62 * s], 0.15 * s, 0.6),
    ];
    Volume3::from_fn(Dims3::new(n, n, n), [1.0; 3], |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let mut v = 0.0;
        for (c, sigma, a) in &bumps {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            v += a * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        v as f32
    })
    .expect("phantom dims are valid")
}

/// Sphere centered on the grid's geometric center.
///
/// `margin` shrinks the radius (in voxels) below the inscribed-sphere radius
/// `(min(dims)-1)/2`; a small margin keeps the mask clear of boundary voxels
/// whose resampled coordinates sit exactly on the grid edge.
pub fn centered_sphere(dims: Dims3, margin: f64) -> Mask3 {
    let cx = (dims.w as f64 - 1.0) / 2.0;
    let cy = (dims.h as f64 - 1.0) / 2.0;
    let cz = (dims.d as f64 - 1.0) / 2.0;
    let r = (dims.w.min(dims.h).min(dims.d) as f64 - 1.0) / 2.0 - margin;
    let r2 = r * r;
    Mask3::from_fn(dims, |x, y, z| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let dz = z as f64 - cz;
        dx * dx + dy * dy + dz * dz <= r2
    })
    .expect("sphere dims are valid")
}

/// Relative L2 error between two volumes over a mask, ignoring voxels that
/// are invalid in either input. Errors if the reference is all zero there.
pub fn relative_l2(reference: &Volume3, candidate: &Volume3, mask: &Mask3) -> Result<f64> {
    crate::volume::check_same_dims(reference.dims(), candidate.dims(), "relative_l2")?;
    crate::volume::check_same_dims(reference.dims(), mask.dims(), "relative_l2 mask")?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (i, &m) in mask.bits().iter().enumerate() {
        if m && reference.valid_at_index(i) && candidate.valid_at_index(i) {
            let r = reference.data()[i] as f64;
            let c = candidate.data()[i] as f64;
            num += (r - c) * (r - c);
            den += r * r;
        }
    }
    if den == 0.0 {
        return Err(crate::error::MafError::Degenerate(
            "relative_l2: reference has zero norm over the mask".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// One synthetic exam: three input sequences, a translation target equal to
/// the first sequence, and a tumor segmentation.
pub struct SyntheticCase {
    pub t1n: Volume3,
    pub t2w: Volume3,
    pub t2f: Volume3,
    pub t1c: Volume3,
    pub seg: Volume3,
    pub brain: Mask3,
}

/// Build a deterministic synthetic exam on an n^3 grid.
///
/// The brain is a centered sphere with smooth positive intensities; the
/// tumor is a small sphere inside it (segmentation label 1). The target
/// equals the first input sequence, so an identity translator is a perfect
/// predictor and injected noise is the only error source.
pub fn synthetic_case(n: usize, case_seed: u64) -> SyntheticCase {
    let dims = Dims3::new(n, n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let jitter: [f64; 3] = [
        rng.random_range(-0.04..0.04),
        rng.random_range(-0.04..0.04),
        rng.random_range(-0.04..0.04),
    ];

    let s = n as f64;
    let brain_r = 0.42 * s;
    let (cx, cy, cz) = ((s - 1.0) / 2.0, (s - 1.0) / 2.0, (s - 1.0) / 2.0);
    let brain = Mask3::from_fn(dims, |x, y, z| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let dz = z as f64 - cz;
        dx * dx + dy * dy + dz * dz <= brain_r * brain_r
    })
    .expect("brain dims are valid");

    let tumor_c = [
        cx + (0.12 + jitter[0]) * s,
        cy + (0.10 + jitter[1]) * s,
        cz + (0.05 + jitter[2]) * s,
    ];
    let tumor_r = 0.10 * s;
    let seg = Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
        let dx = x as f64 - tumor_c[0];
        let dy = y as f64 - tumor_c[1];
        let dz = z as f64 - tumor_c[2];
        if dx * dx + dy * dy + dz * dz <= tumor_r * tumor_r {
            1.0
        } else {
            0.0
        }
    })
    .expect("seg dims are valid");

    let base = smooth_phantom(n);
    let masked = |scale: f32, offset: f32| -> Volume3 {
        let data: Vec<f32> = base
            .data()
            .iter()
            .zip(brain.bits())
            .map(|(&v, &inside)| if inside { scale * v + offset } else { 0.0 })
            .collect();
        Volume3::new(dims, [1.0; 3], data).expect("masked dims are valid")
    };

    // Offsets keep every brain voxel strictly positive (foreground rule).
    let t1n = masked(1.0, 0.05);
    let t2w = masked(0.8, 0.10);
    let t2f = masked(1.2, 0.07);
    let t1c = t1n.clone();

    SyntheticCase {
        t1n,
        t2w,
        t2f,
        t1c,
        seg,
        brain,
    }
}
