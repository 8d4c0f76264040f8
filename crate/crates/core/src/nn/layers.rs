use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, NnError, Parameters, Tensor};

fn check_len(context: &str, expected: usize, found: usize) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { context: context.into(), expected: vec![expected], found: vec![found] })
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient of ReLU given its input `x`; zero at the kink.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect()
}

/// `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self { weight: Tensor::uniform(&[output, input], bound, rng), bias: Tensor::uniform(&[output], bound, rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let (o, i) = (self.output_dim(), self.input_dim());
        check_len("linear input", i, x.len())?;
        let w = &self.weight.data;
        Ok((0..o)
            .map(|r| self.bias.data[r] + w[r * i..(r + 1) * i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let (o, i) = (self.output_dim(), self.input_dim());
        let mut dx = vec![0.0; i];
        for r in 0..o {
            let d = dy[r];
            if d == 0.0 {
                continue;
            }
            grad.bias.data[r] += d;
            let row = &self.weight.data[r * i..(r + 1) * i];
            let grow = &mut grad.weight.data[r * i..(r + 1) * i];
            for k in 0..i {
                grow[k] += d * x[k];
                dx[k] += d * row[k];
            }
        }
        dx
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Convolution along the path axis of a `len x in` input with padding so
/// the output keeps length `len`. Kernel shape `[taps, in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(taps: usize, input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((taps * input) as f64).sqrt();
        Self {
            kernel: Tensor::uniform(&[taps, input, output], bound, rng),
            bias: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.shape[0]
    }

    pub fn input_channels(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn output_channels(&self) -> usize {
        self.kernel.shape[2]
    }

    fn pad(&self) -> isize {
        (self.taps() / 2) as isize
    }

    pub fn forward(&self, x: &[f64], len: usize) -> Result<Vec<f64>, NnError> {
        let (taps, ci, co) = (self.taps(), self.input_channels(), self.output_channels());
        check_len("conv1d input", len * ci, x.len())?;
        let k = &self.kernel.data;
        let mut y = vec![0.0; len * co];
        for l in 0..len {
            let out = &mut y[l * co..(l + 1) * co];
            out.copy_from_slice(&self.bias.data);
            for t in 0..taps {
                let src = l as isize + t as isize - self.pad();
                if src < 0 || src >= len as isize {
                    continue;
                }
                let xin = &x[src as usize * ci..(src as usize + 1) * ci];
                for (i, xv) in xin.iter().enumerate() {
                    let kr = &k[(t * ci + i) * co..(t * ci + i + 1) * co];
                    for (o, kv) in kr.iter().enumerate() {
                        out[o] += kv * xv;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &[f64], len: usize, dy: &[f64], grad: &mut Conv1d) -> Vec<f64> {
        let (taps, ci, co) = (self.taps(), self.input_channels(), self.output_channels());
        let k = &self.kernel.data;
        let mut dx = vec![0.0; len * ci];
        for l in 0..len {
            let d = &dy[l * co..(l + 1) * co];
            for (o, dv) in d.iter().enumerate() {
                grad.bias.data[o] += dv;
            }
            for t in 0..taps {
                let src = l as isize + t as isize - self.pad();
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = src as usize;
                for i in 0..ci {
                    let base = (t * ci + i) * co;
                    let xv = x[s * ci + i];
                    let mut acc = 0.0;
                    for o in 0..co {
                        grad.kernel.data[base + o] += d[o] * xv;
                        acc += d[o] * k[base + o];
                    }
                    dx[s * ci + i] += acc;
                }
            }
        }
        dx
    }
}

impl Parameters for Conv1d {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

/// Standard LSTM cell. Gate rows are stacked as input, forget, candidate,
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, each of hidden size.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(&[4 * hidden, input], bound, rng),
            w_hh: Tensor::uniform(&[4 * hidden, hidden], bound, rng),
            bias: Tensor::uniform(&[4 * hidden], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache), NnError> {
        let (ni, nh) = (self.input_dim(), self.hidden_dim());
        check_len("lstm input", ni, x.len())?;
        check_len("lstm hidden state", nh, h.len())?;
        check_len("lstm cell state", nh, c.len())?;
        let mut gates = self.bias.data.clone();
        for (r, g) in gates.iter_mut().enumerate() {
            let wi = &self.w_ih.data[r * ni..(r + 1) * ni];
            let wh = &self.w_hh.data[r * nh..(r + 1) * nh];
            *g += wi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
        for (r, g) in gates.iter_mut().enumerate() {
            *g = if (2 * nh..3 * nh).contains(&r) { g.tanh() } else { sigmoid(*g) };
        }
        let mut c_new = vec![0.0; nh];
        let mut h_new = vec![0.0; nh];
        let mut tanh_c = vec![0.0; nh];
        for k in 0..nh {
            let (i, f, g, o) = (gates[k], gates[nh + k], gates[2 * nh + k], gates[3 * nh + k]);
            c_new[k] = f * c[k] + i * g;
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o * tanh_c[k];
        }
        let cache = LstmStepCache { x: x.to_vec(), h_prev: h.to_vec(), c_prev: c.to_vec(), gates, tanh_c };
        Ok((h_new, c_new, cache))
    }

    /// Returns `(dx, dh_prev, dc_prev)` and accumulates parameter gradients.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (ni, nh) = (self.input_dim(), self.hidden_dim());
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * nh];
        let mut dc_prev = vec![0.0; nh];
        for k in 0..nh {
            let (i, f, gg, o) = (g[k], g[nh + k], g[2 * nh + k], g[3 * nh + k]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da[k] = dct * gg * i * (1.0 - i);
            da[nh + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            da[2 * nh + k] = dct * i * (1.0 - gg * gg);
            da[3 * nh + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        let mut dx = vec![0.0; ni];
        let mut dh_prev = vec![0.0; nh];
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias.data[r] += d;
            let wi = &self.w_ih.data[r * ni..(r + 1) * ni];
            let gi = &mut grad.w_ih.data[r * ni..(r + 1) * ni];
            for k in 0..ni {
                gi[k] += d * cache.x[k];
                dx[k] += d * wi[k];
            }
            let wh = &self.w_hh.data[r * nh..(r + 1) * nh];
            let gh = &mut grad.w_hh.data[r * nh..(r + 1) * nh];
            for k in 0..nh {
                gh[k] += d * cache.h_prev[k];
                dh_prev[k] += d * wh[k];
            }
        }
        (dx, dh_prev, dc_prev)
    }

    /// Runs over a sequence from `(h0, c0)`, returning every hidden state.
    pub fn run(&self, xs: &[Vec<f64>], h0: &[f64], c0: &[f64]) -> Result<(Vec<Vec<f64>>, LstmSeqCache), NnError> {
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (hn, cn, cache) = self.step(x, &h, &c)?;
            hs.push(hn.clone());
            steps.push(cache);
            h = hn;
            c = cn;
        }
        Ok((hs, LstmSeqCache { steps, final_c: c }))
    }

    /// Backpropagation through time. `dhs[t]` is the loss gradient on the
    /// hidden output at step `t`; `dh_last`/`dc_last` flow into the final state.
    /// Returns `(dxs, dh0, dc0)`.
    pub fn run_backward(
        &self,
        cache: &LstmSeqCache,
        dhs: &[Vec<f64>],
        dh_last: &[f64],
        dc_last: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = cache.steps.len();
        let mut dh = dh_last.to_vec();
        let mut dc = dc_last.to_vec();
        let mut dxs = vec![Vec::new(); n];
        for t in (0..n).rev() {
            for (a, b) in dh.iter_mut().zip(&dhs[t]) {
                *a += b;
            }
            let (dx, dhp, dcp) = self.step_backward(&cache.steps[t], &dh, &dc, grad);
            dxs[t] = dx;
            dh = dhp;
            dc = dcp;
        }
        (dxs, dh, dc)
    }
}

impl Parameters for LstmCell {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w_ih".into(), &self.w_ih), ("w_hh".into(), &self.w_hh), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmSeqCache {
    pub steps: Vec<LstmStepCache>,
    pub final_c: Vec<f64>,
}

/// Two independent LSTM cells, one reading the sequence forwards and one
/// backwards; outputs are `[h_forward(t), h_backward(t)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmCache {
    fwd: LstmSeqCache,
    bwd: LstmSeqCache,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self { forward: LstmCell::new(input, hidden, rng), backward: LstmCell::new(input, hidden, rng) }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiLstmCache), NnError> {
        let h = self.hidden_dim();
        let zeros = vec![0.0; h];
        let (hf, fwd) = self.forward.run(xs, &zeros, &zeros)?;
        let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let (hb, bwd) = self.backward.run(&reversed, &zeros, &zeros)?;
        let n = xs.len();
        let out = (0..n)
            .map(|t| {
                let mut v = hf[t].clone();
                v.extend_from_slice(&hb[n - 1 - t]);
                v
            })
            .collect();
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward_pass(&self, cache: &BiLstmCache, douts: &[Vec<f64>], grad: &mut BiLstm) -> Vec<Vec<f64>> {
        let h = self.hidden_dim();
        let n = douts.len();
        let zeros = vec![0.0; h];
        let dhf: Vec<Vec<f64>> = douts.iter().map(|d| d[..h].to_vec()).collect();
        let dhb: Vec<Vec<f64>> = (0..n).map(|s| douts[n - 1 - s][h..].to_vec()).collect();
        let (dxf, _, _) = self.forward.run_backward(&cache.fwd, &dhf, &zeros, &zeros, &mut grad.forward);
        let (dxb, _, _) = self.backward.run_backward(&cache.bwd, &dhb, &zeros, &zeros, &mut grad.backward);
        (0..n)
            .map(|t| dxf[t].iter().zip(&dxb[n - 1 - t]).map(|(a, b)| a + b).collect())
            .collect()
    }
}

impl Parameters for BiLstm {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> =
            self.forward.tensors().into_iter().map(|(n, t)| (format!("forward.{n}"), t)).collect();
        v.extend(self.backward.tensors().into_iter().map(|(n, t)| (format!("backward.{n}"), t)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.forward.tensors_mut();
        v.extend(self.backward.tensors_mut());
        v
    }
}
