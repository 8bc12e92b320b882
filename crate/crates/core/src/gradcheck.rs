//! Central finite differences, used as the independent check on
//! [`Tape::backward`](crate::Tape::backward).

use crate::tensor::ParamSet;

/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate of every tensor.
pub fn finite_diff_grad<F>(mut f: F, theta: &ParamSet, h: f64) -> ParamSet
where
    F: FnMut(&ParamSet) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = theta.clone();
    let mut out = ParamSet::new();
    let names: alloc::vec::Vec<_> = theta.keys().cloned().collect();
    for name in names {
        let mut g = theta[&name].clone();
        for i in 0..g.len() {
            let orig = theta[&name].data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let plus = f(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let minus = f(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.insert(name, g);
    }
    out
}

/// Largest `|a − b| / max(|a|, |b|)` over matching entries. Pairs whose
/// absolute difference is at most `abs_floor` count as exact. Missing names
/// or shape mismatches return infinity.
pub fn max_relative_error(a: &ParamSet, b: &ParamSet, abs_floor: f64) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (name, ta) in a {
        let Some(tb) = b.get(name) else {
            return f64::INFINITY;
        };
        if ta.shape() != tb.shape() {
            return f64::INFINITY;
        }
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let diff = (x - y).abs();
            if diff <= abs_floor {
                continue;
            }
            worst = worst.max(diff / x.abs().max(y.abs()));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name.into(), Tensor::scalar(v));
        p
    }

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|p| p["x"].data()[0].powi(2), &single("x", 3.0), 1e-5);
        assert!((g["x"].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut theta = single("a", 1.0);
        theta.insert("b".into(), Tensor::ones(2, 3));
        let g = finite_diff_grad(|_| 4.2, &theta, 1e-5);
        assert!(g.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn relative_error_floor() {
        let a = single("x", 1e-12);
        let b = single("x", -1e-12);
        assert_eq!(max_relative_error(&a, &b, 1e-8), 0.0);
        assert!(max_relative_error(&single("x", 1.0), &single("x", 1.1), 1e-8) > 0.09);
        assert_eq!(max_relative_error(&single("x", 1.0), &single("y", 1.0), 1e-8), f64::INFINITY);
    }
}
