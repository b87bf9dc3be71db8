//! Gauss–Legendre rules and the panel schemes built on them.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let pn = if n == 0 { 1.0 } else { p1 };
    let pnm1 = if n == 0 { 0.0 } else { p0 };
    let d = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
    (pn, d)
}

/// Integrates `f` over `[0, m]` with panels `[m/2^{k+1}, m/2^k]`,
/// `k = 0..levels`, plus a final panel `[0, m/2^levels]`. Suited to
/// integrands with an integrable singularity at 0.
pub fn integrate_geometric_toward_zero<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    m: f64,
    levels: usize,
    mut f: F,
) -> f64 {
    let mut acc = 0.0;
    let mut hi = m;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        acc += rule.integrate(lo, hi, &mut f);
        hi = lo;
    }
    acc + rule.integrate(0.0, hi, &mut f)
}

/// Outcome of [`integrate_to_infinity`].
#[derive(Clone, Copy, Debug)]
pub struct TailIntegral {
    pub value: f64,
    /// Estimated remaining tail beyond the last panel.
    pub tail_estimate: f64,
    pub panels: usize,
}

/// Integrates a nonnegative `f` over `[z0, ∞)` on doubling panels
/// `[z0·2^k, z0·2^{k+1}]`. Stops once the geometric extrapolation of the
/// remaining tail drops below `rel_tol` times the running total. Returns
/// `None` when the panel contributions stop decaying within `max_panels`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    z0: f64,
    rel_tol: f64,
    max_panels: usize,
    mut f: F,
) -> Option<TailIntegral> {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let mut lo = z0;
    for k in 0..max_panels {
        let hi = 2.0 * lo;
        let c = rule.integrate(lo, hi, &mut f);
        total += c;
        if let Some(p) = prev {
            if c == 0.0 {
                return Some(TailIntegral { value: total, tail_estimate: 0.0, panels: k + 1 });
            }
            let q = c / p;
            if q < 1.0 && k >= 3 {
                let tail = c * q / (1.0 - q);
                if tail <= rel_tol * total {
                    return Some(TailIntegral {
                        value: total + tail,
                        tail_estimate: tail,
                        panels: k + 1,
                    });
                }
            }
        }
        prev = Some(c);
        lo = hi;
    }
    None
}
