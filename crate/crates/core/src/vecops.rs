//! Small dense-vector helpers shared by the engines.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

pub fn axpy(acc: &mut [f64], alpha: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += alpha * x;
    }
}

pub fn scale(v: &[f64], alpha: f64) -> Vec<f64> {
    v.iter().map(|x| x * alpha).collect()
}

pub fn check_dim(expected: usize, found: usize) -> crate::Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(crate::Error::DimensionMismatch { expected, found })
    }
}
