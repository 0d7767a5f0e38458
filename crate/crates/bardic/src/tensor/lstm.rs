use super::{sigmoid, DetRng, Mat};
use crate::error::{Error, Result};

/// Parameters of a single LSTM cell.
///
/// The four gates (input `i`, forget `f`, output `o`, candidate `g`) are
/// packed side by side: `w_x` is `input_dim x 4H`, `w_h` is `H x 4H`, and
/// `b` has length `4H`, in gate order `[i, f, o, g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: Mat,
    pub w_h: Mat,
    pub b: Vec<f64>,
}

/// Cached activations of one cell application, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// post-activation gate values, `[i, f, o, g]` packed
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

impl LstmStep {
    /// Hidden state the cell was stepped from.
    pub fn h_prev(&self) -> &[f64] {
        &self.h_prev
    }
}

impl LstmCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCellParams {
            input_dim,
            hidden_dim,
            w_x: Mat::zeros(input_dim, 4 * hidden_dim),
            w_h: Mat::zeros(hidden_dim, 4 * hidden_dim),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Uniform init in `[-scale, scale]`, with the forget-gate bias set to
    /// +1.0 as a training stabilizer.
    pub fn init(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut DetRng) -> Self {
        let w_x = Mat::uniform(input_dim, 4 * hidden_dim, scale, rng);
        let w_h = Mat::uniform(hidden_dim, 4 * hidden_dim, scale, rng);
        let mut b = vec![0.0; 4 * hidden_dim];
        for v in &mut b[hidden_dim..2 * hidden_dim] {
            *v = 1.0;
        }
        LstmCellParams {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            b,
        }
    }

    fn check_dims(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_dim
            || h_prev.len() != self.hidden_dim
            || c_prev.len() != self.hidden_dim
        {
            return Err(Error::Shape {
                context: "lstm_cell",
                expected: format!(
                    "x[{}], h[{}], c[{}]",
                    self.input_dim, self.hidden_dim, self.hidden_dim
                ),
                actual: format!("x[{}], h[{}], c[{}]", x.len(), h_prev.len(), c_prev.len()),
            });
        }
        Ok(())
    }

    /// One cell application:
    /// `i,f,o = sigmoid(affine)`, `g = tanh(affine)`,
    /// `c = f*c_prev + i*g`, `h = o*tanh(c)`.
    pub fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStep> {
        self.check_dims(x, h_prev, c_prev)?;
        let hd = self.hidden_dim;
        let mut z = self.b.clone();
        for (r, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                let row = self.w_x.row(r);
                for (zv, &w) in z.iter_mut().zip(row) {
                    *zv += xv * w;
                }
            }
        }
        for (r, &hv) in h_prev.iter().enumerate() {
            if hv != 0.0 {
                let row = self.w_h.row(r);
                for (zv, &w) in z.iter_mut().zip(row) {
                    *zv += hv * w;
                }
            }
        }
        let mut gates = vec![0.0; 4 * hd];
        for k in 0..hd {
            gates[k] = sigmoid(z[k]);
            gates[hd + k] = sigmoid(z[hd + k]);
            gates[2 * hd + k] = sigmoid(z[2 * hd + k]);
            gates[3 * hd + k] = z[3 * hd + k].tanh();
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[3 * hd + k];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[2 * hd + k] * tanh_c[k];
        }
        Ok(LstmStep {
            h,
            c,
            gates,
            tanh_c,
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
        })
    }

    /// Backward through one cached step. `dh` and `dc` are the upstream
    /// gradients on this step's `h` and `c`. Parameter gradients accumulate
    /// into `grads`; returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        step: &LstmStep,
        dh: &[f64],
        dc_upstream: &[f64],
        grads: &mut LstmCellParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        debug_assert_eq!(dh.len(), hd);
        debug_assert_eq!(dc_upstream.len(), hd);
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let i = step.gates[k];
            let f = step.gates[hd + k];
            let o = step.gates[2 * hd + k];
            let g = step.gates[3 * hd + k];
            let tc = step.tanh_c[k];
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_upstream[k];
            let d_i = dc * g;
            let d_f = dc * step.c_prev[k];
            let d_g = dc * i;
            dc_prev[k] = dc * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[hd + k] = d_f * f * (1.0 - f);
            dz[2 * hd + k] = d_o * o * (1.0 - o);
            dz[3 * hd + k] = d_g * (1.0 - g * g);
        }
        grads.w_x.add_outer(&step.x, &dz);
        grads.w_h.add_outer(&step.h_prev, &dz);
        for (bv, &d) in grads.b.iter_mut().zip(&dz) {
            *bv += d;
        }
        let dx = self.w_x.vec_mul_t(&dz);
        let dh_prev = self.w_h.vec_mul_t(&dz);
        (dx, dh_prev, dc_prev)
    }

    pub fn add_assign(&mut self, other: &LstmCellParams) {
        self.w_x.add_assign(&other.w_x);
        self.w_h.add_assign(&other.w_h);
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w_x.scale(s);
        self.w_h.scale(s);
        for v in &mut self.b {
            *v *= s;
        }
    }
}
