//! Dense feed-forward networks with tanh hidden layers.
//!
//! `input_gradient` expands the gradient of a scalar-output network into
//! first-order tape primitives (a layer-wise Jacobian-transpose recurrence),
//! so a loss containing that gradient still needs only one backward sweep.

use rand::Rng;

use super::tape::{NodeId, Tape};
use crate::error::{HamflowError, Result};

/// A named parameter block: a `rows x cols` matrix (cols = 1 for vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Fully connected network, tanh on hidden layers, linear final layer.
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    sizes: Vec<usize>,
    /// (weight, bias) per layer; weight is out x in.
    layers: Vec<(Tensor, Tensor)>,
}

impl DenseNetwork {
    /// Weights uniform in +-1/sqrt(fan_in), biases zero.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Tensor::zeros(fan_out, fan_in);
            for v in w.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            layers.push((w, Tensor::zeros(fan_out, 1)));
        }
        DenseNetwork {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    /// All-zero parameters; the output is the final bias (zero).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .map(|w| (Tensor::zeros(w[1], w[0]), Tensor::zeros(w[1], 1)))
            .collect();
        DenseNetwork {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Register all parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        let mut w_ids = Vec::with_capacity(self.layers.len());
        let mut b_ids = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            w_ids.push(tape.leaf(w.data.clone()));
            b_ids.push(tape.leaf(b.data.clone()));
        }
        BoundNet {
            sizes: self.sizes.clone(),
            w_ids,
            b_ids,
        }
    }

    /// Plain forward pass without a tape (diagnostics, grid dumps).
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(HamflowError::Config(format!(
                "network input dimension {} does not match expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut cur = x.to_vec();
        for (li, (w, b)) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; w.rows];
            for r in 0..w.rows {
                let mut acc = b.data[r];
                for (c, &xc) in cur.iter().enumerate() {
                    acc += w.data[r * w.cols + c] * xc;
                }
                next[r] = if li + 1 < self.layers.len() { acc.tanh() } else { acc };
            }
            cur = next;
        }
        Ok(cur)
    }
}

/// Tape-registered view of a [`DenseNetwork`].
pub struct BoundNet {
    sizes: Vec<usize>,
    w_ids: Vec<NodeId>,
    b_ids: Vec<NodeId>,
}

impl BoundNet {
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        self.w_ids
            .iter()
            .zip(&self.b_ids)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    /// Batched forward pass; `x` has length `batch * input_dim`.
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        Ok(self.forward_with_hidden(tape, x)?.0)
    }

    /// Forward pass that also returns the hidden tanh activations, which the
    /// input-gradient recurrence reuses.
    pub fn forward_with_hidden(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        if tape.len_of(x) % self.input_dim() != 0 {
            return Err(HamflowError::Config(format!(
                "network input length {} is not a multiple of input dimension {}",
                tape.len_of(x),
                self.input_dim()
            )));
        }
        let n_layers = self.w_ids.len();
        let mut hidden = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut cur = x;
        for l in 0..n_layers {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let z = tape.affine(self.w_ids[l], cur, self.b_ids[l], rows, cols);
            cur = if l + 1 < n_layers {
                let a = tape.tanh(z);
                hidden.push(a);
                a
            } else {
                z
            };
        }
        Ok((cur, hidden))
    }

    /// Gradient of a scalar-output network w.r.t. its input, built from
    /// primitive ops so it stays differentiable w.r.t. input and parameters.
    pub fn input_gradient(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        if self.output_dim() != 1 {
            return Err(HamflowError::Usage(format!(
                "input_gradient requires a scalar-output network, got output dimension {}",
                self.output_dim()
            )));
        }
        let (_, hidden) = self.forward_with_hidden(tape, x)?;
        let batch = tape.len_of(x) / self.input_dim();
        let n_layers = self.w_ids.len();

        // Seed with the final linear layer: v = W_L^T 1 per sample.
        let ones = tape.constant(vec![1.0; batch]);
        let (rows, cols) = (self.sizes[n_layers], self.sizes[n_layers - 1]);
        let mut v = tape.matvec_t(self.w_ids[n_layers - 1], ones, rows, cols);

        // Walk back through hidden layers: v <- W_l^T (v o tanh'(z_l)).
        for l in (0..n_layers - 1).rev() {
            let a = hidden[l];
            let a2 = tape.square(a);
            let neg = tape.scale(a2, -1.0);
            let dact = tape.offset(neg, 1.0);
            let u = tape.mul(v, dact);
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            v = tape.matvec_t(self.w_ids[l], u, rows, cols);
        }
        Ok(v)
    }
}
