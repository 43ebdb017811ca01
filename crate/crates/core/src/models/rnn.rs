//! Single-layer Elman cell with tanh activation, usable in either time
//! direction. Forward and backward passes are explicit loops; the backward
//! pass is plain backpropagation through time.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{real, Real};

/// Half-width of the uniform initialization interval for recurrent weights.
const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell<R: Real> {
    /// hidden × input
    pub w_in: Array2<R>,
    /// hidden × hidden
    pub w_rec: Array2<R>,
    /// hidden
    pub bias: Array1<R>,
}

impl<R: Real> RnnCell<R> {
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| real(rng.random_range(-INIT_RANGE..INIT_RANGE)))
        };
        RnnCell {
            w_in: draw(hidden_dim, input_dim),
            w_rec: draw(hidden_dim, hidden_dim),
            bias: Array1::zeros(hidden_dim),
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        RnnCell {
            w_in: Array2::zeros(other.w_in.dim()),
            w_rec: Array2::zeros(other.w_rec.dim()),
            bias: Array1::zeros(other.bias.dim()),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.bias.len()
    }

    /// Hidden states indexed by *position*. With `reversed = false` time runs
    /// left to right (`h[t]` depends on `h[t-1]`); with `reversed = true` it
    /// runs right to left (`h[t]` depends on `h[t+1]`). The initial state is
    /// zero.
    pub fn forward(&self, inputs: &[Array1<R>], reversed: bool) -> Vec<Array1<R>> {
        let t_len = inputs.len();
        let h_dim = self.hidden_dim();
        let mut hidden = vec![Array1::zeros(h_dim); t_len];
        let mut prev = Array1::zeros(h_dim);
        let order: Box<dyn Iterator<Item = usize>> = if reversed {
            Box::new((0..t_len).rev())
        } else {
            Box::new(0..t_len)
        };
        for t in order {
            let mut pre = self.w_in.dot(&inputs[t]);
            pre += &self.w_rec.dot(&prev);
            pre += &self.bias;
            let h = pre.mapv(R::tanh);
            prev = h.clone();
            hidden[t] = h;
        }
        hidden
    }

    /// Backpropagation through time. `d_hidden[t]` must hold ∂L/∂h\[t\] from
    /// everything *outside* the recurrence; recurrent contributions are added
    /// internally. Parameter gradients accumulate into `grads` and input
    /// gradients into `d_inputs` (both may carry prior contributions).
    pub fn backward(
        &self,
        inputs: &[Array1<R>],
        hidden: &[Array1<R>],
        mut d_hidden: Vec<Array1<R>>,
        reversed: bool,
        grads: &mut Self,
        d_inputs: &mut [Array1<R>],
    ) {
        let t_len = inputs.len();
        debug_assert_eq!(hidden.len(), t_len);
        debug_assert_eq!(d_hidden.len(), t_len);
        debug_assert_eq!(d_inputs.len(), t_len);
        // Walk positions in reverse time order.
        let order: Box<dyn Iterator<Item = usize>> = if reversed {
            Box::new(0..t_len)
        } else {
            Box::new((0..t_len).rev())
        };
        for t in order {
            // h = tanh(pre)  =>  dL/dpre = dL/dh * (1 - h^2)
            let mut da = d_hidden[t].clone();
            for (a, &h) in da.iter_mut().zip(hidden[t].iter()) {
                *a *= R::one() - h * h;
            }
            for (i, &ai) in da.iter().enumerate() {
                grads.w_in.row_mut(i).scaled_add(ai, &inputs[t]);
            }
            grads.bias += &da;
            d_inputs[t].scaled_add(R::one(), &self.w_in.t().dot(&da));
            // The previous state in time order: t-1 forward, t+1 reversed.
            let prev_t = if reversed {
                if t + 1 < t_len { Some(t + 1) } else { None }
            } else {
                t.checked_sub(1)
            };
            if let Some(pt) = prev_t {
                for (i, &ai) in da.iter().enumerate() {
                    grads.w_rec.row_mut(i).scaled_add(ai, &hidden[pt]);
                }
                let back = self.w_rec.t().dot(&da);
                d_hidden[pt] += &back;
            }
        }
    }
}
