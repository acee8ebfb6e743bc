//! Attention BiLSTM over token ids, evaluated on padded mini-batches.
//!
//! Per direction an LSTM produces h_t; H_t = [h_fwd_t; h_bwd_t]. Attention
//! scores are s_t = v_att . tanh(W_att H_t + b_att), weights are
//! softmax(s), the context is q = sum_t alpha_t H_t, and the output layer is
//! z = W_out q + b_out followed by a sigmoid (one output) or a softmax.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// One logit, probability by sigmoid, binary cross-entropy loss.
    Sigmoid,
    /// One logit per class, softmax, categorical cross-entropy loss.
    Softmax(usize),
}

impl Head {
    fn outputs(self) -> usize {
        match self {
            Head::Sigmoid => 1,
            Head::Softmax(c) => c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub vocab: usize,
    pub d_e: usize,
    pub d_h: usize,
    pub head: Head,
}

/// Parameter tensors in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    Embedding,
    WFwd,
    UFwd,
    BFwd,
    WBwd,
    UBwd,
    BBwd,
    WAtt,
    BAtt,
    VAtt,
    WOut,
    BOut,
}

impl Tensor {
    pub const ALL: [Tensor; 12] = [
        Tensor::Embedding,
        Tensor::WFwd,
        Tensor::UFwd,
        Tensor::BFwd,
        Tensor::WBwd,
        Tensor::UBwd,
        Tensor::BBwd,
        Tensor::WAtt,
        Tensor::BAtt,
        Tensor::VAtt,
        Tensor::WOut,
        Tensor::BOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Embedding => "embedding",
            Tensor::WFwd => "w_fwd",
            Tensor::UFwd => "u_fwd",
            Tensor::BFwd => "b_fwd",
            Tensor::WBwd => "w_bwd",
            Tensor::UBwd => "u_bwd",
            Tensor::BBwd => "b_bwd",
            Tensor::WAtt => "w_att",
            Tensor::BAtt => "b_att",
            Tensor::VAtt => "v_att",
            Tensor::WOut => "w_out",
            Tensor::BOut => "b_out",
        }
    }
}

impl Layout {
    /// (rows, cols) of a tensor; vectors have one row.
    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let (e, h, c) = (self.d_e, self.d_h, self.head.outputs());
        match t {
            Tensor::Embedding => (self.vocab, e),
            Tensor::WFwd | Tensor::WBwd => (4 * h, e),
            Tensor::UFwd | Tensor::UBwd => (4 * h, h),
            Tensor::BFwd | Tensor::BBwd => (1, 4 * h),
            Tensor::WAtt => (2 * h, 2 * h),
            Tensor::BAtt | Tensor::VAtt => (1, 2 * h),
            Tensor::WOut => (c, 2 * h),
            Tensor::BOut => (1, c),
        }
    }

    pub fn range(&self, t: Tensor) -> Range<usize> {
        let mut start = 0;
        for u in Tensor::ALL {
            let (r, c) = self.shape(u);
            if u == t {
                return start..start + r * c;
            }
            start += r * c;
        }
        unreachable!()
    }

    pub fn size(&self) -> usize {
        self.range(Tensor::BOut).end
    }
}

/// Network parameters stored flat in [`Tensor::ALL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layout: Layout,
    pub theta: Vec<f64>,
}

/// One example: token ids and a target (0/1 for sigmoid, class index for softmax).
pub type Example<'a> = (&'a [usize], usize);

struct Direction {
    /// Gate activations [i f g o] per step (B x 4h).
    gates: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
}

pub struct Forward {
    mask: Array2<f64>,
    x: Vec<Array2<f64>>,
    fwd: Direction,
    bwd: Direction,
    hcat: Vec<Array2<f64>>,
    att_u: Vec<Array2<f64>>,
    /// Attention weights, T x B.
    pub alpha: Array2<f64>,
    q: Array2<f64>,
    /// Output logits, B x outputs.
    pub logits: Array2<f64>,
}

/// Row-wise concatenation of equally wide blocks.
fn stack(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("blocks share a width")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Network {
    pub fn zeros(layout: Layout) -> Self {
        Network { layout, theta: vec![0.0; layout.size()] }
    }

    /// Uniform initialization: embeddings in [-0.5, 0.5], other weights in
    /// [-1/sqrt(d_h), 1/sqrt(d_h)], forget-gate bias 1, other biases 0.
    pub fn init(layout: Layout, rng: &mut impl Rng) -> Self {
        let mut net = Network::zeros(layout);
        let k = 1.0 / (layout.d_h as f64).sqrt();
        for t in Tensor::ALL {
            let range = layout.range(t);
            let scale = match t {
                Tensor::Embedding => 0.5,
                Tensor::BFwd | Tensor::BBwd | Tensor::BAtt | Tensor::BOut => 0.0,
                _ => k,
            };
            for x in &mut net.theta[range] {
                *x = if scale == 0.0 { 0.0 } else { rng.gen_range(-scale..scale) };
            }
        }
        let h = layout.d_h;
        for t in [Tensor::BFwd, Tensor::BBwd] {
            let r = layout.range(t);
            net.theta[r.start + h..r.start + 2 * h].fill(1.0);
        }
        net
    }

    pub fn tensor(&self, t: Tensor) -> ArrayView2<'_, f64> {
        let shape = self.layout.shape(t);
        ArrayView2::from_shape(shape, &self.theta[self.layout.range(t)]).expect("layout shape")
    }

    fn vector(&self, t: Tensor) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.theta[self.layout.range(t)])
    }

    /// Runs a padded batch. Every sequence must be non-empty.
    pub fn forward(&self, batch: &[&[usize]]) -> Forward {
        let l = self.layout;
        let (b, h) = (batch.len(), l.d_h);
        let t_max = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        assert!(batch.iter().all(|s| !s.is_empty()), "empty token sequence");
        let emb = self.tensor(Tensor::Embedding);
        let mut mask = Array2::zeros((t_max, b));
        let mut x = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut xt = Array2::zeros((b, l.d_e));
            for (j, seq) in batch.iter().enumerate() {
                if let Some(&tok) = seq.get(t) {
                    mask[[t, j]] = 1.0;
                    xt.row_mut(j).assign(&emb.row(tok));
                }
            }
            x.push(xt);
        }
        let order_f: Vec<usize> = (0..t_max).collect();
        let order_b: Vec<usize> = (0..t_max).rev().collect();
        let fwd = self.run_direction(&x, &mask, &order_f, Tensor::WFwd, Tensor::UFwd, Tensor::BFwd);
        let bwd = self.run_direction(&x, &mask, &order_b, Tensor::WBwd, Tensor::UBwd, Tensor::BBwd);

        let w_att = self.tensor(Tensor::WAtt);
        let b_att = self.vector(Tensor::BAtt);
        let v_att = self.vector(Tensor::VAtt);
        let mut hcat = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut hc = Array2::zeros((b, 2 * h));
            hc.slice_mut(s![.., ..h]).assign(&fwd.h[t]);
            hc.slice_mut(s![.., h..]).assign(&bwd.h[t]);
            hcat.push(hc);
        }
        let mut u_all = stack(&hcat).dot(&w_att.t());
        u_all += &b_att;
        u_all.mapv_inplace(f64::tanh);
        let st = u_all.dot(&v_att);
        let mut scores = Array2::from_elem((t_max, b), f64::NEG_INFINITY);
        for t in 0..t_max {
            for j in 0..b {
                if mask[[t, j]] > 0.0 {
                    scores[[t, j]] = st[t * b + j];
                }
            }
        }
        let att_u: Vec<Array2<f64>> = (0..t_max).map(|t| u_all.slice(s![t * b..(t + 1) * b, ..]).to_owned()).collect();
        let mut alpha = scores;
        for mut col in alpha.columns_mut() {
            let m = col.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            col.mapv_inplace(|v| (v - m).exp());
            let z = col.sum();
            col /= z;
        }
        let mut q = Array2::zeros((b, 2 * h));
        for t in 0..t_max {
            let a = alpha.row(t).insert_axis(Axis(1));
            q += &(&hcat[t] * &a);
        }
        let mut logits = q.dot(&self.tensor(Tensor::WOut).t());
        logits += &self.vector(Tensor::BOut);
        Forward { mask, x, fwd, bwd, hcat, att_u, alpha, q, logits }
    }

    fn run_direction(
        &self,
        x: &[Array2<f64>],
        mask: &Array2<f64>,
        order: &[usize],
        w: Tensor,
        u: Tensor,
        bias: Tensor,
    ) -> Direction {
        let (w, u, bias) = (self.tensor(w), self.tensor(u), self.vector(bias));
        let h = self.layout.d_h;
        let b = mask.ncols();
        let n = order.len();
        let mut dir = Direction {
            gates: vec![Array2::zeros((0, 0)); n],
            c: vec![Array2::zeros((0, 0)); n],
            h: vec![Array2::zeros((0, 0)); n],
        };
        let mut h_prev = Array2::<f64>::zeros((b, h));
        let mut c_prev = Array2::<f64>::zeros((b, h));
        // Input projections of all steps in one product, rows t*b..(t+1)*b.
        let xw = stack(x).dot(&w.t());
        for &t in order {
            let mut z = xw.slice(s![t * b..(t + 1) * b, ..]).to_owned();
            z += &h_prev.dot(&u.t());
            z += &bias;
            z.slice_mut(s![.., ..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let mut c = Array2::zeros((b, h));
            let mut hn = Array2::zeros((b, h));
            for j in 0..b {
                let m = mask[[t, j]] > 0.0;
                let zr = z.row(j);
                for k in 0..h {
                    if m {
                        let (i, f, g, o) = (zr[k], zr[h + k], zr[2 * h + k], zr[3 * h + k]);
                        let cv = f * c_prev[[j, k]] + i * g;
                        c[[j, k]] = cv;
                        hn[[j, k]] = o * cv.tanh();
                    } else {
                        c[[j, k]] = c_prev[[j, k]];
                        hn[[j, k]] = h_prev[[j, k]];
                    }
                }
            }
            dir.gates[t] = z;
            dir.c[t] = c.clone();
            dir.h[t] = hn.clone();
            h_prev = hn;
            c_prev = c;
        }
        dir
    }

    /// Output probabilities per example: P(label 1) for a sigmoid head, the
    /// class distribution for a softmax head.
    pub fn probabilities(&self, fw: &Forward) -> Array2<f64> {
        match self.layout.head {
            Head::Sigmoid => fw.logits.mapv(sigmoid),
            Head::Softmax(_) => {
                let mut p = fw.logits.clone();
                for mut row in p.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                    row.mapv_inplace(|v| (v - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                p
            }
        }
    }

    /// Summed loss of a batch: binary cross-entropy on the logit for a
    /// sigmoid head, categorical cross-entropy for a softmax head.
    pub fn loss(&self, batch: &[Example]) -> f64 {
        let seqs: Vec<&[usize]> = batch.iter().map(|e| e.0).collect();
        let fw = self.forward(&seqs);
        self.loss_from(&fw, batch)
    }

    fn loss_from(&self, fw: &Forward, batch: &[Example]) -> f64 {
        batch
            .iter()
            .enumerate()
            .map(|(j, &(_, y))| match self.layout.head {
                Head::Sigmoid => {
                    let z = fw.logits[[j, 0]];
                    softplus(z) - y as f64 * z
                }
                Head::Softmax(_) => {
                    let row = fw.logits.row(j);
                    let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                    m + row.mapv(|v| (v - m).exp()).sum().ln() - row[y]
                }
            })
            .sum()
    }

    /// Summed loss and its gradient with respect to `theta`.
    pub fn loss_and_grad(&self, batch: &[Example]) -> (f64, Vec<f64>) {
        let seqs: Vec<&[usize]> = batch.iter().map(|e| e.0).collect();
        let fw = self.forward(&seqs);
        let loss = self.loss_from(&fw, batch);
        let mut dlogits = self.probabilities(&fw);
        for (j, &(_, y)) in batch.iter().enumerate() {
            match self.layout.head {
                Head::Sigmoid => dlogits[[j, 0]] -= y as f64,
                Head::Softmax(_) => dlogits[[j, y]] -= 1.0,
            }
        }
        (loss, self.backward(&fw, &seqs, &dlogits))
    }

    fn backward(&self, fw: &Forward, seqs: &[&[usize]], dlogits: &Array2<f64>) -> Vec<f64> {
        let l = self.layout;
        let h = l.d_h;
        let t_max = fw.x.len();
        let mut grad = vec![0.0; l.size()];
        let put = |t: Tensor, g: ArrayView2<f64>, grad: &mut Vec<f64>| {
            let r = l.range(t);
            for (dst, src) in grad[r].iter_mut().zip(g.iter()) {
                *dst += *src;
            }
        };

        let w_out = self.tensor(Tensor::WOut);
        put(Tensor::WOut, dlogits.t().dot(&fw.q).view(), &mut grad);
        put(Tensor::BOut, dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)).view(), &mut grad);
        let dq = dlogits.dot(&w_out);

        // Attention.
        let w_att = self.tensor(Tensor::WAtt);
        let v_att = self.vector(Tensor::VAtt);
        let b = dq.nrows();
        let mut dalpha = Array2::zeros((t_max, b));
        for t in 0..t_max {
            Zip::from(dalpha.row_mut(t))
                .and(fw.hcat[t].rows())
                .and(dq.rows())
                .for_each(|d, hr, qr| *d = hr.dot(&qr));
        }
        let mut dscore = Array2::zeros((t_max, b));
        for j in 0..b {
            let a = fw.alpha.column(j);
            let mean = a.dot(&dalpha.column(j));
            for t in 0..t_max {
                dscore[[t, j]] = a[t] * (dalpha[[t, j]] - mean);
            }
        }
        let mut dv_att = Array1::zeros(2 * h);
        let mut dpres = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ds = dscore.row(t).insert_axis(Axis(1));
            let u = &fw.att_u[t];
            dv_att += &u.t().dot(&dscore.row(t));
            dpres.push((&ds * &v_att) * &u.mapv(|x| 1.0 - x * x));
        }
        let dpre = stack(&dpres);
        let dw_att = dpre.t().dot(&stack(&fw.hcat));
        let db_att = dpre.sum_axis(Axis(0));
        let dh_all = dpre.dot(&w_att);
        let mut dh_f = Vec::with_capacity(t_max);
        let mut dh_b = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut dh = dh_all.slice(s![t * b..(t + 1) * b, ..]).to_owned();
            dh += &(&dq * &fw.alpha.row(t).insert_axis(Axis(1)));
            dh_f.push(dh.slice(s![.., ..h]).to_owned());
            dh_b.push(dh.slice(s![.., h..]).to_owned());
        }
        put(Tensor::WAtt, dw_att.view(), &mut grad);
        put(Tensor::BAtt, db_att.insert_axis(Axis(0)).view(), &mut grad);
        put(Tensor::VAtt, dv_att.insert_axis(Axis(0)).view(), &mut grad);

        let mut dx: Vec<Array2<f64>> = (0..t_max).map(|_| Array2::zeros((b, l.d_e))).collect();
        let order_f: Vec<usize> = (0..t_max).collect();
        let order_b: Vec<usize> = (0..t_max).rev().collect();
        let (dw, du, db) = self.bptt(fw, &fw.fwd, &dh_f, &order_f, Tensor::WFwd, Tensor::UFwd, &mut dx);
        put(Tensor::WFwd, dw.view(), &mut grad);
        put(Tensor::UFwd, du.view(), &mut grad);
        put(Tensor::BFwd, db.insert_axis(Axis(0)).view(), &mut grad);
        let (dw, du, db) = self.bptt(fw, &fw.bwd, &dh_b, &order_b, Tensor::WBwd, Tensor::UBwd, &mut dx);
        put(Tensor::WBwd, dw.view(), &mut grad);
        put(Tensor::UBwd, du.view(), &mut grad);
        put(Tensor::BBwd, db.insert_axis(Axis(0)).view(), &mut grad);

        let emb = l.range(Tensor::Embedding);
        for (t, dxt) in dx.iter().enumerate() {
            for (j, seq) in seqs.iter().enumerate() {
                if let Some(&tok) = seq.get(t) {
                    let row = emb.start + tok * l.d_e;
                    for (k, v) in dxt.row(j).iter().enumerate() {
                        grad[row + k] += v;
                    }
                }
            }
        }
        grad
    }

    /// Back-propagation through time for one direction. `order` is the
    /// processing order of the forward pass.
    #[allow(clippy::too_many_arguments)]
    fn bptt(
        &self,
        fw: &Forward,
        dir: &Direction,
        dh_out: &[Array2<f64>],
        order: &[usize],
        w: Tensor,
        u: Tensor,
        dx: &mut [Array2<f64>],
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let (w, u) = (self.tensor(w), self.tensor(u));
        let (h, b) = (self.layout.d_h, fw.mask.ncols());
        let n = order.len();
        let mut dzs = vec![Array2::zeros((0, 0)); n];
        let mut h_prevs = vec![Array2::zeros((0, 0)); n];
        let mut dh_next = Array2::<f64>::zeros((b, h));
        let mut dc_next = Array2::<f64>::zeros((b, h));
        let zeros = Array2::<f64>::zeros((b, h));
        for (step, &t) in order.iter().enumerate().rev() {
            let (h_prev, c_prev) = match step {
                0 => (&zeros, &zeros),
                _ => (&dir.h[order[step - 1]], &dir.c[order[step - 1]]),
            };
            let gates = &dir.gates[t];
            let c = &dir.c[t];
            let dh = &dh_out[t] + &dh_next;
            let mut dz = Array2::zeros((b, 4 * h));
            let mut dc_prev = Array2::zeros((b, h));
            let mut dh_pass = Array2::zeros((b, h));
            for j in 0..b {
                let active = fw.mask[[t, j]] > 0.0;
                for k in 0..h {
                    if !active {
                        dc_prev[[j, k]] = dc_next[[j, k]];
                        dh_pass[[j, k]] = dh[[j, k]];
                        continue;
                    }
                    let (i, f, g, o) = (gates[[j, k]], gates[[j, h + k]], gates[[j, 2 * h + k]], gates[[j, 3 * h + k]]);
                    let tc = c[[j, k]].tanh();
                    let dhk = dh[[j, k]];
                    let dc = dhk * o * (1.0 - tc * tc) + dc_next[[j, k]];
                    dz[[j, k]] = dc * g * i * (1.0 - i);
                    dz[[j, h + k]] = dc * c_prev[[j, k]] * f * (1.0 - f);
                    dz[[j, 2 * h + k]] = dc * i * (1.0 - g * g);
                    dz[[j, 3 * h + k]] = dhk * tc * o * (1.0 - o);
                    dc_prev[[j, k]] = dc * f;
                }
            }
            dh_next = dz.dot(&u) + dh_pass;
            dc_next = dc_prev;
            dzs[t] = dz;
            h_prevs[t] = h_prev.clone();
        }
        // Weight gradients summed over steps as single products.
        let dz = stack(&dzs);
        let dw = dz.t().dot(&stack(&fw.x));
        let du = dz.t().dot(&stack(&h_prevs));
        let dbias = dz.sum_axis(Axis(0));
        let dx_all = dz.dot(&w);
        for (t, dxt) in dx.iter_mut().enumerate() {
            *dxt += &dx_all.slice(s![t * b..(t + 1) * b, ..]);
        }
        (dw, du, dbias)
    }
}
