use super::quadrature::lobatto_nodes;

/// Nodal Lagrange polynomials on [-1, 1] with nodes at the Lobatto points.
#[derive(Clone, Debug)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
    denom: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(order: usize) -> Self {
        Self::with_nodes(lobatto_nodes(order))
    }

    pub fn with_nodes(nodes: Vec<f64>) -> Self {
        let denom = (0..nodes.len())
            .map(|j| {
                (0..nodes.len())
                    .filter(|&m| m != j)
                    .map(|m| nodes[j] - nodes[m])
                    .product()
            })
            .collect();
        Self { nodes, denom }
    }

    pub fn order(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values_into(&self, x: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        for j in 0..n {
            let mut p = 1.0;
            for m in 0..n {
                if m != j {
                    p *= x - self.nodes[m];
                }
            }
            out[j] = p / self.denom[j];
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.values_into(x, &mut out);
        out
    }

    pub fn derivatives_into(&self, x: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                if i == j {
                    continue;
                }
                let mut p = 1.0;
                for m in 0..n {
                    if m != j && m != i {
                        p *= x - self.nodes[m];
                    }
                }
                sum += p;
            }
            out[j] = sum / self.denom[j];
        }
    }

    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.derivatives_into(x, &mut out);
        out
    }
}
