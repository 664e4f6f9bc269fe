//! One-dimensional Gauss-Legendre and Gauss-Lobatto point sets on [-1, 1].

use std::f64::consts::PI;

/// Evaluates the Legendre polynomials P_n and P_{n-1} at `x`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for m in 2..=n {
        let m = m as f64;
        let next = ((2.0 * m - 1.0) * x * p - (m - 1.0) * p_prev) / m;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Gauss-Legendre rule with `n` points; exact for polynomials of degree 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "a Gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(n, x);
            let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, p_prev) = legendre_pair(n, x);
        let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
        points[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // symmetrize to kill last-bit asymmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (points[j] - points[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        points[i] = -x;
        points[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    (points, weights)
}

/// Gauss-Lobatto nodes for a polynomial of `order`, i.e. `order + 1` points
/// including both endpoints. Order 0 returns the single midpoint.
pub fn lobatto_nodes(order: usize) -> Vec<f64> {
    if order == 0 {
        return vec![0.0];
    }
    let n = order;
    let mut x: Vec<f64> = (0..=n).map(|i| -(PI * i as f64 / n as f64).cos()).collect();
    for xi in x.iter_mut().take(n).skip(1) {
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(n, *xi);
            let dx = (*xi * p - p_prev) / ((n as f64 + 1.0) * p);
            *xi -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
    }
    x[0] = -1.0;
    x[n] = 1.0;
    for i in 0..(n + 1) / 2 {
        let j = n - i;
        let v = 0.5 * (x[j] - x[i]);
        x[i] = -v;
        x[j] = v;
    }
    if n % 2 == 0 {
        x[n / 2] = 0.0;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_monomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn lobatto_small_orders() {
        assert_eq!(lobatto_nodes(0), vec![0.0]);
        assert_eq!(lobatto_nodes(1), vec![-1.0, 1.0]);
        assert_eq!(lobatto_nodes(2), vec![-1.0, 0.0, 1.0]);
        let x = lobatto_nodes(3);
        let s = 5f64.sqrt() / 5.0;
        assert!((x[1] + s).abs() < 1e-15 && (x[2] - s).abs() < 1e-15);
        let x = lobatto_nodes(4);
        let s = 21f64.sqrt() / 7.0;
        assert!((x[1] + s).abs() < 1e-15 && x[2] == 0.0);
    }

    #[test]
    fn lobatto_interior_nodes_are_roots_of_legendre_derivative() {
        for order in 2..17 {
            let x = lobatto_nodes(order);
            for &xi in &x[1..order] {
                let (p, p_prev) = legendre_pair(order, xi);
                let dp = order as f64 * (xi * p - p_prev) / (xi * xi - 1.0);
                assert!(dp.abs() < 1e-9, "order {order}: P'({xi}) = {dp}");
            }
            assert!(x.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
