//! Unidirectional and bidirectional LSTM layers with explicit
//! backpropagation through time. Gate order inside the fused `4h` axis is
//! input, forget, cell, output.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{glorot_uniform, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub hidden: usize,
    /// Input kernel, `input_dim x 4h`.
    pub wx: Array2<f64>,
    /// Recurrent kernel, `h x 4h`.
    pub wh: Array2<f64>,
    /// Bias, `1 x 4h`; the forget slice starts at 1.
    pub b: Array2<f64>,
}

pub struct LstmCache {
    x: Array2<f64>,
    /// Activated gates per step, `T x 4h`.
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array2<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Self {
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Lstm {
            hidden,
            wx: glorot_uniform(rng, input_dim, 4 * hidden),
            wh: glorot_uniform(rng, hidden, 4 * hidden),
            b,
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LstmCache) {
        let h_dim = self.hidden;
        let t_len = x.nrows();
        let mut gates = x.dot(&self.wx) + &self.b;
        let mut c = Array2::zeros((t_len, h_dim));
        let mut h = Array2::zeros((t_len, h_dim));
        for t in 0..t_len {
            if t > 0 {
                let rec = h.row(t - 1).dot(&self.wh);
                let mut g = gates.row_mut(t);
                g += &rec;
            }
            let mut g = gates.row_mut(t);
            for k in 0..h_dim {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[h_dim + k]);
                let cand = g[2 * h_dim + k].tanh();
                let o = sigmoid(g[3 * h_dim + k]);
                g[k] = i;
                g[h_dim + k] = f;
                g[2 * h_dim + k] = cand;
                g[3 * h_dim + k] = o;
                let c_prev = if t > 0 { c[[t - 1, k]] } else { 0.0 };
                let ct = f * c_prev + i * cand;
                c[[t, k]] = ct;
                h[[t, k]] = o * ct.tanh();
            }
        }
        let out = h.clone();
        (
            out,
            LstmCache {
                x: x.to_owned(),
                gates,
                c,
                h,
            },
        )
    }

    /// Returns the gradient w.r.t. the input sequence (when `need_dx`) and
    /// the parameters.
    pub fn backward(&self, cache: &LstmCache, dh_seq: ArrayView2<'_, f64>, need_dx: bool) -> (Option<Array2<f64>>, LstmGrads) {
        let h_dim = self.hidden;
        let t_len = cache.x.nrows();
        let mut d_gates = Array2::zeros((t_len, 4 * h_dim));
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];
        let mut dwh = Array2::zeros(self.wh.raw_dim());
        for t in (0..t_len).rev() {
            let g = cache.gates.row(t);
            {
                let mut dg = d_gates.row_mut(t);
                for k in 0..h_dim {
                    let (i, f, cand, o) = (g[k], g[h_dim + k], g[2 * h_dim + k], g[3 * h_dim + k]);
                    let ct = cache.c[[t, k]];
                    let tc = ct.tanh();
                    let c_prev = if t > 0 { cache.c[[t - 1, k]] } else { 0.0 };
                    let dh = dh_seq[[t, k]] + dh_next[k];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    dg[k] = dc * cand * i * (1.0 - i);
                    dg[h_dim + k] = dc * c_prev * f * (1.0 - f);
                    dg[2 * h_dim + k] = dc * i * (1.0 - cand * cand);
                    dg[3 * h_dim + k] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
            }
            let dg = d_gates.row(t);
            if t > 0 {
                let h_prev = cache.h.row(t - 1);
                for (r, &hp) in h_prev.iter().enumerate() {
                    if hp != 0.0 {
                        dwh.row_mut(r).scaled_add(hp, &dg);
                    }
                }
            }
            let dh_prev = self.wh.dot(&dg);
            dh_next.copy_from_slice(dh_prev.as_slice().expect("contiguous"));
        }
        let dwx = cache.x.t().dot(&d_gates);
        let db = d_gates.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = need_dx.then(|| d_gates.dot(&self.wx.t()));
        (dx, LstmGrads { wx: dwx, wh: dwh, b: db })
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

fn reversed(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl BiLstm {
    pub fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Self {
        BiLstm {
            fwd: Lstm::new(rng, input_dim, hidden),
            bwd: Lstm::new(rng, input_dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BiLstmCache) {
        let h = self.hidden();
        let (hf, cf) = self.fwd.forward(x);
        let (hb_rev, cb) = self.bwd.forward(reversed(x).view());
        let mut out = Array2::zeros((x.nrows(), 2 * h));
        out.slice_mut(s![.., ..h]).assign(&hf);
        out.slice_mut(s![.., h..]).assign(&hb_rev.slice(s![..;-1, ..]));
        (out, BiLstmCache { fwd: cf, bwd: cb })
    }

    pub fn backward(
        &self,
        cache: &BiLstmCache,
        dout: ArrayView2<'_, f64>,
        need_dx: bool,
    ) -> (Option<Array2<f64>>, LstmGrads, LstmGrads) {
        let h = self.hidden();
        let (dxf, gf) = self.fwd.backward(&cache.fwd, dout.slice(s![.., ..h]), need_dx);
        let db_rev = reversed(dout.slice(s![.., h..]));
        let (dxb_rev, gb) = self.bwd.backward(&cache.bwd, db_rev.view(), need_dx);
        let dx = dxf.zip(dxb_rev).map(|(f, b)| f + &b.slice(s![..;-1, ..]));
        (dx, gf, gb)
    }
}
