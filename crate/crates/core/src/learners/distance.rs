//! Distances between feature vectors.

fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `1 - x·y / (|x| |y|)`, in `[0, 2]`. Defined as 1 when either vector is
/// all-zero.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    cosine_with_norms(x, y, squared_norm(x), squared_norm(y))
}

/// Cosine distance given precomputed squared norms.
///
/// The squared norms must come from the same summation as `dot`, which makes
/// the distance of a vector to itself exactly 0.
pub(crate) fn cosine_with_norms(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    if nx == 0.0 || ny == 0.0 {
        return 1.0;
    }
    let cos = dot(x, y) / (nx * ny).sqrt();
    1.0 - cos.clamp(-1.0, 1.0)
}

pub(crate) fn cached_norm(x: &[f64]) -> f64 {
    squared_norm(x)
}

/// Minkowski distance of order `p >= 1`.
pub fn minkowski_distance(x: &[f64], y: &[f64], p: u32) -> f64 {
    debug_assert!(p >= 1);
    match p {
        1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        2 => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        _ => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs().powi(p as i32))
            .sum::<f64>()
            .powf(1.0 / f64::from(p)),
    }
}
