//! Bidirectional LSTM with exact backpropagation through time.

use rand::Rng;

use crate::error::{bail, Result};
use crate::scalar::{sigmoid, Scalar};

use super::linear::dot;
use super::params::{prefixed, ParamView, Parameters};
use super::tensor::Tensor;

/// One direction. Gate rows are stacked as input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection<T> {
    pub input_size: usize,
    pub hidden: usize,
    /// `4h x input_size`
    pub w_ih: Vec<T>,
    /// `4h x h`
    pub w_hh: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T> {
    pub forward: LstmDirection<T>,
    pub backward: LstmDirection<T>,
}

#[derive(Debug, Clone)]
struct DirectionTrace<T> {
    /// Activated gates per time step, `n x 4h`.
    gates: Vec<T>,
    cells: Vec<T>,
    hidden: Vec<T>,
    reverse: bool,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace<T> {
    input: Tensor<T>,
    fwd: DirectionTrace<T>,
    bwd: DirectionTrace<T>,
}

impl<T: Scalar> LstmDirection<T> {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            input_size,
            hidden,
            w_ih: vec![T::zero(); 4 * hidden * input_size],
            w_hh: vec![T::zero(); 4 * hidden * hidden],
            bias: vec![T::zero(); 4 * hidden],
        }
    }

    /// Uniform `+-1/sqrt(h)` weights, zero biases except the forget gate at 1.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut draw = |len: usize| -> Vec<T> {
            (0..len)
                .map(|_| T::lit(rng.gen_range(-bound..=bound)))
                .collect()
        };
        let w_ih = draw(4 * hidden * input_size);
        let w_hh = draw(4 * hidden * hidden);
        let mut bias = vec![T::zero(); 4 * hidden];
        bias[hidden..2 * hidden].fill(T::one());
        Self {
            input_size,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    fn order(n: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        }
    }

    fn run(&self, x: &Tensor<T>, reverse: bool) -> DirectionTrace<T> {
        let (n, h, d) = (x.rows(), self.hidden, self.input_size);
        let mut gates = vec![T::zero(); n * 4 * h];
        let mut cells = vec![T::zero(); n * h];
        let mut hidden = vec![T::zero(); n * h];
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        let mut z = vec![T::zero(); 4 * h];
        for t in Self::order(n, reverse) {
            let xt = x.row(t);
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = self.bias[r]
                    + dot(&self.w_ih[r * d..(r + 1) * d], xt)
                    + dot(&self.w_hh[r * h..(r + 1) * h], &h_prev);
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let c_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                g[j] = i_g;
                g[h + j] = f_g;
                g[2 * h + j] = c_g;
                g[3 * h + j] = o_g;
                let c = f_g * c_prev[j] + i_g * c_g;
                cells[t * h + j] = c;
                hidden[t * h + j] = o_g * c.tanh();
            }
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
            h_prev.copy_from_slice(&hidden[t * h..(t + 1) * h]);
        }
        DirectionTrace {
            gates,
            cells,
            hidden,
            reverse,
        }
    }

    /// `dy` holds this direction's output gradient, `n x h`.
    fn backprop(
        &self,
        x: &Tensor<T>,
        tr: &DirectionTrace<T>,
        dy: &[T],
        grad: &mut LstmDirection<T>,
        dx: &mut [T],
    ) {
        let (n, h, d) = (x.rows(), self.hidden, self.input_size);
        let one = T::one();
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        let zeros = vec![T::zero(); h];
        let steps: Vec<usize> = Self::order(n, tr.reverse).collect();
        for (pos, &t) in steps.iter().enumerate().rev() {
            let (c_prev, h_prev) = if pos == 0 {
                (&zeros[..], &zeros[..])
            } else {
                let p = steps[pos - 1];
                (
                    &tr.cells[p * h..(p + 1) * h],
                    &tr.hidden[p * h..(p + 1) * h],
                )
            };
            let g = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = dy[t * h + j] + dh_next[j];
                let tc = tr.cells[t * h + j].tanh();
                let d_o = dh * tc;
                let dc = dh * o_g * (one - tc * tc) + dc_next[j];
                dz[j] = dc * c_g * i_g * (one - i_g);
                dz[h + j] = dc * c_prev[j] * f_g * (one - f_g);
                dz[2 * h + j] = dc * i_g * (one - c_g * c_g);
                dz[3 * h + j] = d_o * o_g * (one - o_g);
                dc_next[j] = dc * f_g;
            }
            let xt = x.row(t);
            dh_next.fill(T::zero());
            let dxt = &mut dx[t * d..(t + 1) * d];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == T::zero() {
                    continue;
                }
                grad.bias[r] += dzr;
                let wi = &self.w_ih[r * d..(r + 1) * d];
                for ((gw, &xv), (dxv, &w)) in grad.w_ih[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(xt)
                    .zip(dxt.iter_mut().zip(wi))
                {
                    *gw += dzr * xv;
                    *dxv += dzr * w;
                }
                let wh = &self.w_hh[r * h..(r + 1) * h];
                for ((gw, &hv), (dhv, &w)) in grad.w_hh[r * h..(r + 1) * h]
                    .iter_mut()
                    .zip(h_prev)
                    .zip(dh_next.iter_mut().zip(wh))
                {
                    *gw += dzr * hv;
                    *dhv += dzr * w;
                }
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for LstmDirection<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        let (h, d) = (self.hidden, self.input_size);
        vec![
            ParamView {
                name: "w_ih".into(),
                shape: vec![4 * h, d],
                values: &self.w_ih,
            },
            ParamView {
                name: "w_hh".into(),
                shape: vec![4 * h, h],
                values: &self.w_hh,
            },
            ParamView {
                name: "bias".into(),
                shape: vec![4 * h],
                values: &self.bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

impl<T: Scalar> BiLstm<T> {
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input_size == 0 || hidden == 0 {
            bail!(Shape, "LSTM sizes must be non-zero");
        }
        let forward = LstmDirection::init(input_size, hidden, rng);
        let backward = LstmDirection::init(input_size, hidden, rng);
        Ok(Self { forward, backward })
    }

    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            forward: LstmDirection::zeros(input_size, hidden),
            backward: LstmDirection::zeros(input_size, hidden),
        }
    }

    pub fn from_directions(forward: LstmDirection<T>, backward: LstmDirection<T>) -> Result<Self> {
        if forward.input_size != backward.input_size || forward.hidden != backward.hidden {
            bail!(Shape, "LSTM directions disagree in size");
        }
        let ok = |d: &LstmDirection<T>| {
            d.w_ih.len() == 4 * d.hidden * d.input_size
                && d.w_hh.len() == 4 * d.hidden * d.hidden
                && d.bias.len() == 4 * d.hidden
        };
        if !ok(&forward) || !ok(&backward) {
            bail!(Shape, "LSTM parameter blocks have inconsistent lengths");
        }
        Ok(Self { forward, backward })
    }

    pub fn input_size(&self) -> usize {
        self.forward.input_size
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// Width of the concatenated output.
    pub fn out_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn forward(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(seq)?.0)
    }

    pub fn forward_traced(&self, seq: &Tensor<T>) -> Result<(Tensor<T>, BiLstmTrace<T>)> {
        seq.expect_matrix(self.input_size(), "LSTM input")?;
        if seq.rows() == 0 {
            bail!(Shape, "LSTM input sequence is empty");
        }
        let fwd = self.forward.run(seq, false);
        let bwd = self.backward.run(seq, true);
        let (n, h) = (seq.rows(), self.hidden());
        let mut out = Vec::with_capacity(n * 2 * h);
        for t in 0..n {
            out.extend_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
            out.extend_from_slice(&bwd.hidden[t * h..(t + 1) * h]);
        }
        Ok((
            Tensor::matrix(n, 2 * h, out)?,
            BiLstmTrace {
                input: seq.clone(),
                fwd,
                bwd,
            },
        ))
    }

    pub fn backward(
        &self,
        trace: &BiLstmTrace<T>,
        dy: &Tensor<T>,
        grads: &mut BiLstm<T>,
    ) -> Result<Tensor<T>> {
        dy.expect_matrix(self.out_dim(), "LSTM output gradient")?;
        let (n, h) = (trace.input.rows(), self.hidden());
        if dy.rows() != n {
            bail!(
                Shape,
                "gradient has {} rows, forward pass had {n}",
                dy.rows()
            );
        }
        let mut dy_f = Vec::with_capacity(n * h);
        let mut dy_b = Vec::with_capacity(n * h);
        for t in 0..n {
            let r = dy.row(t);
            dy_f.extend_from_slice(&r[..h]);
            dy_b.extend_from_slice(&r[h..]);
        }
        let mut dx = vec![T::zero(); n * self.input_size()];
        self.forward
            .backprop(&trace.input, &trace.fwd, &dy_f, &mut grads.forward, &mut dx);
        self.backward.backprop(
            &trace.input,
            &trace.bwd,
            &dy_b,
            &mut grads.backward,
            &mut dx,
        );
        Tensor::matrix(n, self.input_size(), dx)
    }
}

impl<T: Scalar> Parameters<T> for BiLstm<T> {
    fn views(&self) -> Vec<ParamView<'_, T>> {
        let mut v = prefixed("fwd", self.forward.views());
        v.extend(prefixed("bwd", self.backward.views()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.forward.blocks_mut();
        v.extend(self.backward.blocks_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_output() {
        let s = BiLstm::<f64>::zeros(3, 4);
        let x = Tensor::matrix(5, 3, (0..15).map(|v| v as f64 * 0.3 - 2.0).collect()).unwrap();
        let y = s.forward(&x).unwrap();
        assert_eq!(y.shape(), &[5, 8]);
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = BiLstm::<f64>::init(3, 4, &mut rng).unwrap();
        let mirrored = BiLstm::from_directions(s.backward.clone(), s.forward.clone()).unwrap();
        let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        // Swapping direction parameters and reversing the input reverses time
        // and swaps the output halves.
        let z = s.forward(&x.reversed_rows()).unwrap();
        let h = 4;
        let zm = mirrored.forward(&x).unwrap();
        for t in 0..6 {
            assert_eq!(&z.row(5 - t)[..h], &zm.row(t)[h..]);
            assert_eq!(&z.row(5 - t)[h..], &zm.row(t)[..h]);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let s = BiLstm::<f64>::zeros(3, 2);
        assert!(s.forward(&Tensor::zeros(vec![0, 3])).is_err());
        assert!(s.forward(&Tensor::zeros(vec![2, 4])).is_err());
    }
}
