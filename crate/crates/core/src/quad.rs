//! Gauss-Legendre quadrature with adaptive panel bisection.

/// Nodes and weights of an `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// found by Newton iteration on the Legendre polynomial.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "rule needs at least 2 nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Tricomi initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GaussLegendre { nodes, weights }
    }

    /// Node/weight pairs mapped onto `[a, b]`, for tensor-product rules.
    pub fn scaled_nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = (b - a) / 2.0;
        let mid = (a + b) / 2.0;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, w * half))
            .collect()
    }

    /// `∫_a^b f(x) dx` by the fixed rule mapped onto `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> f64 {
        let half = (b - a) / 2.0;
        let mid = (a + b) / 2.0;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection on top of a base rule: panels split until the whole
/// and the sum of halves agree within the (halving) tolerance.
pub fn integrate_adaptive(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    rule: &GaussLegendre,
) -> f64 {
    fn recurse(
        f: &mut impl FnMut(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        rule: &GaussLegendre,
        depth: usize,
    ) -> f64 {
        let mid = (a + b) / 2.0;
        let left = rule.integrate(a, mid, f);
        let right = rule.integrate(mid, b, f);
        let refined = left + right;
        if (refined - whole).abs() <= tol || depth >= 48 {
            return refined;
        }
        recurse(f, a, mid, left, tol / 2.0, rule, depth + 1)
            + recurse(f, mid, b, right, tol / 2.0, rule, depth + 1)
    }
    let whole = rule.integrate(a, b, f);
    recurse(f, a, b, whole, tol, rule, 0)
}
