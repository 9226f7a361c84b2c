//! Fraction-to-boundary rule, filter acceptance and the barrier update.

/// Largest α ∈ (0, 1] keeping `x + α dx` inside `(lower, upper)` with margin `1 − tau`.
pub fn fraction_to_boundary(x: &[f64], dx: &[f64], lower: &[f64], upper: &[f64], tau: f64) -> f64 {
    let mut a = 1.0f64;
    for i in 0..x.len() {
        if dx[i] < 0.0 && lower[i].is_finite() {
            a = a.min(-tau * (x[i] - lower[i]) / dx[i]);
        }
        if dx[i] > 0.0 && upper[i].is_finite() {
            a = a.min(tau * (upper[i] - x[i]) / dx[i]);
        }
    }
    a
}

/// Largest α ∈ (0, 1] keeping the positive vector `z + α dz` positive with margin `1 − tau`.
pub fn fraction_to_boundary_positive(z: &[f64], dz: &[f64], tau: f64) -> f64 {
    let mut a = 1.0f64;
    for (zi, di) in z.iter().zip(dz) {
        if *di < 0.0 {
            a = a.min(-tau * zi / di);
        }
    }
    a
}

/// Monotone barrier decrease with floor `tol / 11`.
pub fn update_barrier(mu: f64, tol: f64) -> f64 {
    (tol / 11.0).max((0.2 * mu).min(mu.powf(1.5)))
}

#[derive(Clone, Copy, Debug)]
pub struct FilterParams {
    pub theta_max: f64,
    pub theta_min: f64,
    pub s_phi: f64,
    pub s_theta: f64,
    pub delta: f64,
    pub eta_phi: f64,
    pub gamma_theta: f64,
    pub gamma_phi: f64,
    pub alpha_min: f64,
}

impl FilterParams {
    /// Defaults scaled by the initial constraint violation.
    pub fn for_initial_violation(theta0: f64) -> Self {
        FilterParams {
            theta_max: 1e4 * theta0.max(1.0),
            theta_min: 1e-4 * theta0.max(1.0),
            s_phi: 2.3,
            s_theta: 1.1,
            delta: 1.0,
            eta_phi: 1e-4,
            gamma_theta: 1e-5,
            gamma_phi: 1e-8,
            alpha_min: 1e-14,
        }
    }
}

/// Set of forbidden (θ, φ) corners.
#[derive(Clone, Debug, Default)]
pub struct Filter {
    entries: Vec<(f64, f64)>,
}

fn relax(v: f64) -> f64 {
    10.0 * f64::EPSILON * v.abs().max(1.0)
}

impl Filter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when some entry dominates `(theta, phi)`.
    pub fn rejects(&self, theta: f64, phi: f64) -> bool {
        self.entries.iter().any(|&(t, p)| theta > t + relax(t) && phi > p + relax(p))
    }

    /// Adds an entry and drops the ones it dominates.
    pub fn add(&mut self, theta: f64, phi: f64) {
        self.entries.retain(|&(t, p)| !(t >= theta && p >= phi));
        self.entries.push((theta, phi));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub theta: f64,
    pub phi: f64,
    /// Accepted by the Armijo condition on φ (no filter update).
    pub f_type: bool,
    pub backtracks: usize,
}

/// Backtracking filter line search. `trial(α)` evaluates (θ, φ) at the
/// trial point, or `None` when the point cannot be evaluated.
/// Returns `None` when α falls below `alpha_min`.
pub fn filter_line_search(
    theta: f64,
    phi: f64,
    grad_phi_d: f64,
    alpha_max: f64,
    filter: &mut Filter,
    p: &FilterParams,
    trial: &mut dyn FnMut(f64) -> Option<(f64, f64)>,
) -> Option<LineSearchResult> {
    let mut alpha = alpha_max;
    let mut backtracks = 0;
    while alpha >= p.alpha_min {
        if let Some((tt, pt)) = trial(alpha).filter(|(t, f)| t.is_finite() && f.is_finite()) {
            let switching = grad_phi_d < 0.0 && alpha * (-grad_phi_d).powf(p.s_phi) > p.delta * theta.powf(p.s_theta);
            let acceptable = tt <= p.theta_max && !filter.rejects(tt, pt);
            if acceptable {
                if theta <= p.theta_min && switching {
                    if pt - phi - p.eta_phi * alpha * grad_phi_d <= relax(phi) {
                        return Some(LineSearchResult { alpha, theta: tt, phi: pt, f_type: true, backtracks });
                    }
                } else if tt <= (1.0 - p.gamma_theta) * theta + relax(theta)
                    || pt <= phi - p.gamma_phi * theta + relax(phi)
                {
                    filter.add((1.0 - p.gamma_theta) * theta, phi - p.gamma_phi * theta);
                    return Some(LineSearchResult { alpha, theta: tt, phi: pt, f_type: false, backtracks });
                }
            }
        }
        alpha *= 0.5;
        backtracks += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_fraction() {
        let a = fraction_to_boundary(&[0.1], &[-1.0], &[0.0], &[f64::INFINITY], 0.995);
        assert!((a - 0.0995).abs() < 1e-15);
        assert_eq!(fraction_to_boundary(&[0.1], &[1.0], &[0.0], &[f64::INFINITY], 0.995), 1.0);
        assert!((fraction_to_boundary_positive(&[2.0], &[-4.0], 0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn barrier_updates() {
        assert!((update_barrier(0.1, 1e-8) - 0.02).abs() < 1e-15);
        assert!((update_barrier(1e-9, 1e-8) - 1e-8 / 11.0).abs() < 1e-20);
        let mut mu = 0.1;
        let mut k = 0;
        while mu > 1e-8 {
            let next = update_barrier(mu, 1e-8);
            assert!(next < mu);
            mu = next;
            k += 1;
        }
        assert!(k <= 12, "{k} updates");
    }

    #[test]
    fn full_step_on_descent() {
        // φ(x) = x², from x = 1 along d = -1: φ(α) = (1 - α)².
        let p = FilterParams::for_initial_violation(0.0);
        let mut f = Filter::new();
        let r =
            filter_line_search(0.0, 1.0, -2.0, 1.0, &mut f, &p, &mut |a| Some((0.0, (1.0 - a) * (1.0 - a)))).unwrap();
        assert_eq!(r.alpha, 1.0);
        assert!(r.f_type);
    }

    #[test]
    fn cubic_overshoot_halves() {
        // φ(x) = x³ - 3x with constraint x - 1 = 0; from x = 0.5 the step d = 3
        // lands at 3.5 where both θ and φ are larger.
        let theta = |x: f64| (x - 1.0).abs();
        let phi = |x: f64| x * x * x - 3.0 * x;
        let (x, d) = (0.5, 3.0);
        assert!(theta(x + d) > theta(x) && phi(x + d) > phi(x));
        let p = FilterParams::for_initial_violation(theta(x));
        let mut f = Filter::new();
        let gd = (3.0 * x * x - 3.0) * d;
        let r = filter_line_search(theta(x), phi(x), gd, 1.0, &mut f, &p, &mut |a| {
            Some((theta(x + a * d), phi(x + a * d)))
        })
        .unwrap();
        assert_eq!(r.alpha, 0.25);
        assert_eq!(r.backtracks, 2);
        assert!(!r.f_type);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn filter_dominance() {
        let mut f = Filter::new();
        f.add(1.0, 1.0);
        assert!(f.rejects(1.5, 1.5));
        assert!(!f.rejects(0.5, 2.0));
        f.add(0.5, 0.5);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn gives_up_below_alpha_min() {
        let p = FilterParams::for_initial_violation(1.0);
        let mut f = Filter::new();
        assert!(filter_line_search(1.0, 0.0, 1.0, 1.0, &mut f, &p, &mut |_| None).is_none());
    }
}
