//! Derivative-free minimization by the Nelder–Mead simplex method.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when `f_max − f_min ≤ tolerance · (|f_min| + 1e-300)` over the simplex.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Edge length of the initial simplex along each coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 2000,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn centroid(points: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for (i, p) in points.iter().enumerate() {
        if i != skip {
            for (cj, pj) in c.iter_mut().zip(p) {
                *cj += pj;
            }
        }
    }
    let m = (points.len() - 1) as f64;
    c.iter_mut().for_each(|v| *v /= m);
    c
}

fn along(from: &[f64], to: &[f64], t: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimize `f` starting from `x0`. Non-finite objective values are treated
/// as `+∞`, so infeasible regions can be signalled by returning NaN or ∞.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], options: &NelderMeadOptions) -> Minimum {
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let d = x0.len();
    if d == 0 {
        return Minimum {
            x: Vec::new(),
            value: eval(x0),
            iterations: 0,
            converged: true,
        };
    }
    let mut points = vec![x0.to_vec()];
    for j in 0..d {
        let mut p = x0.to_vec();
        p[j] += options.initial_step;
        points.push(p);
    }
    let mut values: Vec<f64> = points.iter().map(|p| eval(p)).collect();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        // order best first
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        points = order.iter().map(|&i| points[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[d]);
        if best.is_finite() && worst - best <= options.tolerance * (best.abs() + 1e-300) {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;
        let c = centroid(&points, d);
        let reflected = along(&c, &points[d], -1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(&c, &points[d], -2.0);
            let fe = eval(&expanded);
            if fe < fr {
                points[d] = expanded;
                values[d] = fe;
            } else {
                points[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            points[d] = reflected;
            values[d] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[d] {
            let p = along(&c, &reflected, 0.5);
            let v = eval(&p);
            (p, v)
        } else {
            let p = along(&c, &points[d], 0.5);
            let v = eval(&p);
            (p, v)
        };
        if fc < values[d].min(fr) {
            points[d] = contracted;
            values[d] = fc;
            continue;
        }
        for i in 1..=d {
            points[i] = along(&points[0], &points[i], 0.5);
            values[i] = eval(&points[i]);
        }
    }
    Minimum {
        x: points.swap_remove(0),
        value: values[0],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2) + 1.0;
        let opts = NelderMeadOptions {
            tolerance: 1e-14,
            max_iterations: 5000,
            initial_step: 0.5,
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.1).powi(2) + 1.0
            }
        };
        let m = nelder_mead(f, &[2.0], &NelderMeadOptions::default());
        assert!((m.x[0] - 0.1).abs() < 1e-3);
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 1.0;
        let opts = NelderMeadOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let m = nelder_mead(f, &[0.0], &opts);
        assert!(!m.converged);
        assert_eq!(m.iterations, 2);
    }
}
