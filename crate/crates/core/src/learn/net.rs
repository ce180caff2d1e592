//! Small residual convolutional network with hand-written backprop.
//!
//! Activations are stored channel-major over the whole batch (`[c][n][h][w]`)
//! so every convolution is a single im2col GEMM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub input_h: usize,
    pub input_w: usize,
    /// Patchifying input convolution; stride equals the kernel.
    pub adapter: [usize; 2],
    /// Kernel of the convolutions inside residual blocks.
    pub kernel: [usize; 2],
    /// Channel width of each residual block; blocks after the first
    /// downsample by 2.
    pub widths: Vec<usize>,
    pub classes: usize,
}

impl Arch {
    /// Default architecture for `task`: 1-D kernels for feature vectors, 2-D
    /// for spectrograms, blocks of 16/32/64 channels.
    pub fn for_task(task: Task, input: [usize; 2], classes: usize) -> Self {
        let (adapter, kernel) = match task {
            Task::AppId => ([1, 8], [1, 3]),
            Task::Activity => ([4, 8], [3, 3]),
        };
        Self {
            input_h: input[0],
            input_w: input[1],
            adapter,
            kernel,
            widths: vec![16, 32, 64],
            classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_h * self.input_w
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub(crate) fn plan(&self) -> Result<Plan> {
        if self.classes < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return invalid("residual widths must be non-empty and positive");
        }
        let [ah, aw] = self.adapter;
        let [kh, kw] = self.kernel;
        if ah == 0 || aw == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return invalid("adapter must be positive and block kernels odd");
        }
        if self.input_h < ah || self.input_w < aw {
            return invalid(format!(
                "input {}x{} smaller than adapter {}x{}",
                self.input_h, self.input_w, ah, aw
            ));
        }
        let mut idx = 0;
        let mut next = |count: usize| {
            let i = idx;
            idx += count;
            i
        };
        let adapter = Conv::new(1, self.widths[0], [ah, aw], [ah, aw], [0, 0], [self.input_h, self.input_w], next(2));
        let mut blocks = Vec::with_capacity(self.widths.len());
        let mut c = self.widths[0];
        let mut hw = [adapter.out_h, adapter.out_w];
        for (b, &width) in self.widths.iter().enumerate() {
            let stride = if b == 0 {
                [1, 1]
            } else {
                [if kh > 1 { 2 } else { 1 }, if kw > 1 { 2 } else { 1 }]
            };
            let pad = [kh / 2, kw / 2];
            let conv1 = Conv::new(c, width, [kh, kw], stride, pad, hw, next(2));
            let out_hw = [conv1.out_h, conv1.out_w];
            let conv2 = Conv::new(width, width, [kh, kw], [1, 1], pad, out_hw, next(2));
            let skip = (c != width || stride != [1, 1]).then(|| Conv::new(c, width, [1, 1], stride, [0, 0], hw, next(2)));
            if let Some(s) = &skip {
                debug_assert_eq!([s.out_h, s.out_w], out_hw);
            }
            blocks.push(Block { conv1, conv2, skip });
            c = width;
            hw = out_hw;
        }
        let head = next(2);
        Ok(Plan {
            adapter,
            blocks,
            feat: c,
            classes: self.classes,
            head,
            n_params: idx,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    in_c: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    /// Index of the weight tensor; the bias follows it.
    param: usize,
}

impl Conv {
    fn new(in_c: usize, out_c: usize, k: [usize; 2], s: [usize; 2], p: [usize; 2], in_hw: [usize; 2], param: usize) -> Self {
        let out_h = (in_hw[0] + 2 * p[0] - k[0]) / s[0] + 1;
        let out_w = (in_hw[1] + 2 * p[1] - k[1]) / s[1] + 1;
        Self {
            in_c,
            out_c,
            kh: k[0],
            kw: k[1],
            sh: s[0],
            sw: s[1],
            ph: p[0],
            pw: p[1],
            in_h: in_hw[0],
            in_w: in_hw[1],
            out_h,
            out_w,
            param,
        }
    }

    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn p_out(&self) -> usize {
        self.out_h * self.out_w
    }

    fn p_in(&self) -> usize {
        self.in_h * self.in_w
    }

    fn shapes(&self) -> [Vec<usize>; 2] {
        [vec![self.out_c, self.in_c, self.kh, self.kw], vec![self.out_c]]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    conv1: Conv,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    adapter: Conv,
    blocks: Vec<Block>,
    feat: usize,
    classes: usize,
    head: usize,
    n_params: usize,
}

impl Plan {
    fn convs(&self) -> Vec<(String, Conv)> {
        let mut v = vec![("adapter".to_string(), self.adapter)];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("block{i}.conv1"), b.conv1));
            v.push((format!("block{i}.conv2"), b.conv2));
            if let Some(s) = b.skip {
                v.push((format!("block{i}.skip"), s));
            }
        }
        v
    }

    fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::with_capacity(self.n_params);
        for (name, c) in self.convs() {
            let [w, b] = c.shapes();
            v.push((format!("{name}.weight"), w));
            v.push((format!("{name}.bias"), b));
        }
        v.push(("head.weight".to_string(), vec![self.classes, self.feat]));
        v.push(("head.bias".to_string(), vec![self.classes]));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn is_weight(&self) -> bool {
        self.name.ends_with(".weight")
    }
}

/// Residual classifier: patchify adapter, residual blocks (two convolutions
/// plus skip each), global average pool, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModel {
    pub task: Task,
    pub arch: Arch,
    pub params: Vec<Param>,
}

/// Per-parameter gradients, index-aligned with `ConvNetModel::params`.
pub type Grads = Vec<Vec<f64>>;

impl ConvNetModel {
    /// Uniform fan-in initialization (`sqrt(6 / fan_in)` for convolutions,
    /// `sqrt(3 / fan_in)` for the head), zero biases.
    pub fn new(task: Task, arch: Arch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(task, arch)?;
        let mut r = rng::stream(seed, "init", 0);
        for p in m.params.iter_mut().filter(|p| p.is_weight()) {
            let fan_in: usize = p.shape[1..].iter().product();
            let gain = if p.name.starts_with("head") { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            p.data.iter_mut().for_each(|w| *w = r.random_range(-bound..bound));
        }
        Ok(m)
    }

    pub fn zeros(task: Task, arch: Arch) -> Result<Self> {
        let plan = arch.plan()?;
        let params = plan
            .param_layout()
            .into_iter()
            .map(|(name, shape)| Param {
                data: vec![0.0; shape.iter().product()],
                name,
                shape,
            })
            .collect();
        Ok(Self { task, arch, params })
    }

    /// Rebuild from stored parameters, checking them against the layout.
    pub fn from_params(task: Task, arch: Arch, params: Vec<Param>) -> Result<Self> {
        let m = Self { task, arch, params };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.arch.plan()?.param_layout();
        if layout.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameter tensors", layout.len()),
                got: format!("{}", self.params.len()),
            });
        }
        for ((name, shape), p) in layout.iter().zip(&self.params) {
            if &p.name != name || &p.shape != shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} {shape:?}"),
                    got: format!("{} {:?} ({} values)", p.name, p.shape, p.data.len()),
                });
            }
            if p.data.iter().any(|w| !w.is_finite()) {
                return invalid(format!("parameter {name} holds non-finite values"));
            }
        }
        Ok(())
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.classes
    }

    pub fn zero_grads(&self) -> Grads {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.arch.input_len() {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "{}x{} = {} features for a {:?} model",
                    self.arch.input_h,
                    self.arch.input_w,
                    self.arch.input_len(),
                    self.task
                ),
                got: format!("{} features", features.len()),
            });
        }
        Ok(())
    }

    /// Class logits of one example.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[features])?.pop().expect("one row"))
    }

    pub fn forward_batch(&self, batch: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let plan = self.arch.plan()?;
        for f in batch {
            self.check_input(f)?;
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.trace(&plan, batch).logits)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(features)?))
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_grads(&self, batch: &[&[f64]], labels: &[usize]) -> Result<(f64, Grads, Vec<Vec<f64>>)> {
        let plan = self.arch.plan()?;
        self.check_batch(batch, labels)?;
        let trace = self.trace(&plan, batch);
        let (loss, dlogits) = cross_entropy(&trace.logits, labels);
        let grads = self.backward(&plan, &trace, &dlogits);
        Ok((loss, grads, trace.logits))
    }

    pub fn loss(&self, batch: &[&[f64]], labels: &[usize]) -> Result<f64> {
        Ok(self.loss_and_pattern(batch, labels)?.0)
    }

    /// Loss plus a fingerprint of every ReLU on/off decision.
    pub(crate) fn loss_and_pattern(&self, batch: &[&[f64]], labels: &[usize]) -> Result<(f64, u64)> {
        let plan = self.arch.plan()?;
        self.check_batch(batch, labels)?;
        let trace = self.trace(&plan, batch);
        Ok((cross_entropy(&trace.logits, labels).0, trace.relu_pattern()))
    }

    fn check_batch(&self, batch: &[&[f64]], labels: &[usize]) -> Result<()> {
        if batch.is_empty() || batch.len() != labels.len() {
            return invalid(format!("batch of {} examples with {} labels", batch.len(), labels.len()));
        }
        for f in batch {
            self.check_input(f)?;
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.arch.classes) {
            return invalid(format!("label {l} out of range for {} classes", self.arch.classes));
        }
        Ok(())
    }

    fn trace(&self, plan: &Plan, batch: &[&[f64]]) -> Trace {
        let n = batch.len();
        let x: Vec<f64> = batch.iter().flat_map(|f| f.iter().copied()).collect();
        let p = &self.params;
        let mut a0 = conv_forward(&plan.adapter, &p[plan.adapter.param].data, &p[plan.adapter.param + 1].data, &x, n);
        relu(&mut a0);
        let mut blocks = Vec::with_capacity(plan.blocks.len());
        let mut cur = &a0;
        for b in &plan.blocks {
            let mut h1 = conv_forward(&b.conv1, &p[b.conv1.param].data, &p[b.conv1.param + 1].data, cur, n);
            relu(&mut h1);
            let mut out = conv_forward(&b.conv2, &p[b.conv2.param].data, &p[b.conv2.param + 1].data, &h1, n);
            match &b.skip {
                Some(s) => {
                    let sk = conv_forward(s, &p[s.param].data, &p[s.param + 1].data, cur, n);
                    out.iter_mut().zip(sk).for_each(|(o, s)| *o += s);
                }
                None => out.iter_mut().zip(cur.iter()).for_each(|(o, s)| *o += s),
            }
            relu(&mut out);
            blocks.push((h1, out));
            cur = &blocks.last().expect("pushed").1;
        }
        let last = plan.blocks.last().expect("non-empty");
        let pos = last.conv2.p_out();
        let mut pooled = vec![0.0; n * plan.feat];
        for c in 0..plan.feat {
            for e in 0..n {
                let s: f64 = cur[(c * n + e) * pos..(c * n + e + 1) * pos].iter().sum();
                pooled[e * plan.feat + c] = s / pos as f64;
            }
        }
        let hw = &p[plan.head].data;
        let hb = &p[plan.head + 1].data;
        let logits = (0..n)
            .map(|e| {
                let g = &pooled[e * plan.feat..(e + 1) * plan.feat];
                (0..plan.classes)
                    .map(|k| hb[k] + dot(&hw[k * plan.feat..(k + 1) * plan.feat], g))
                    .collect()
            })
            .collect();
        Trace {
            n,
            x,
            a0,
            blocks,
            pooled,
            logits,
        }
    }

    fn backward(&self, plan: &Plan, t: &Trace, dlogits: &[Vec<f64>]) -> Grads {
        let n = t.n;
        let p = &self.params;
        let mut g = self.zero_grads();
        let feat = plan.feat;
        let hw = &p[plan.head].data;
        let mut dpooled = vec![0.0; n * feat];
        for (e, dl) in dlogits.iter().enumerate() {
            let pooled = &t.pooled[e * feat..(e + 1) * feat];
            for (k, &d) in dl.iter().enumerate() {
                g[plan.head + 1][k] += d;
                let row = &mut g[plan.head][k * feat..(k + 1) * feat];
                row.iter_mut().zip(pooled).for_each(|(w, &x)| *w += d * x);
                dpooled[e * feat..(e + 1) * feat]
                    .iter_mut()
                    .zip(&hw[k * feat..(k + 1) * feat])
                    .for_each(|(dp, &w)| *dp += d * w);
            }
        }
        let pos = plan.blocks.last().expect("non-empty").conv2.p_out();
        let mut da = vec![0.0; feat * n * pos];
        for c in 0..feat {
            for e in 0..n {
                let v = dpooled[e * feat + c] / pos as f64;
                da[(c * n + e) * pos..(c * n + e + 1) * pos].iter_mut().for_each(|d| *d = v);
            }
        }
        for (bi, b) in plan.blocks.iter().enumerate().rev() {
            let (h1, out) = &t.blocks[bi];
            let input = if bi == 0 { &t.a0 } else { &t.blocks[bi - 1].1 };
            relu_mask(&mut da, out);
            let dz = da;
            let mut dh1 = conv_backward(&b.conv2, &p[b.conv2.param].data, h1, n, &dz, &mut g, true).expect("dx");
            relu_mask(&mut dh1, h1);
            let mut dinput = conv_backward(&b.conv1, &p[b.conv1.param].data, input, n, &dh1, &mut g, true).expect("dx");
            match &b.skip {
                Some(s) => {
                    let ds = conv_backward(s, &p[s.param].data, input, n, &dz, &mut g, true).expect("dx");
                    dinput.iter_mut().zip(ds).for_each(|(d, s)| *d += s);
                }
                None => dinput.iter_mut().zip(&dz).for_each(|(d, s)| *d += s),
            }
            da = dinput;
        }
        relu_mask(&mut da, &t.a0);
        conv_backward(&plan.adapter, &p[plan.adapter.param].data, &t.x, n, &da, &mut g, false);
        g
    }
}

struct Trace {
    n: usize,
    x: Vec<f64>,
    a0: Vec<f64>,
    /// Per block: first post-ReLU conv output, block output.
    blocks: Vec<(Vec<f64>, Vec<f64>)>,
    /// `[n][feat]`
    pooled: Vec<f64>,
    logits: Vec<Vec<f64>>,
}

impl Trace {
    fn relu_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let acts = std::iter::once(&self.a0).chain(self.blocks.iter().flat_map(|(a, b)| [a, b]));
        for a in acts {
            for &v in a {
                h ^= (v > 0.0) as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let d = logits
        .iter()
        .zip(labels)
        .map(|(l, &y)| {
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + l.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - l[y];
            let mut p = softmax(l);
            p[y] -= 1.0;
            p.iter_mut().for_each(|v| *v /= n);
            p
        })
        .collect();
    (loss / n, d)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_mask(d: &mut [f64], out: &[f64]) {
    d.iter_mut().zip(out).for_each(|(d, &o)| {
        if o <= 0.0 {
            *d = 0.0
        }
    });
}

/// `c = a * b + beta * c` with explicit strides; `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: [usize; 2], b: &[f64], b_strides: [usize; 2], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the assertions above bound every index the kernel touches for
    // the dense layouts used by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides[0] as isize,
            a_strides[1] as isize,
            b.as_ptr(),
            b_strides[0] as isize,
            b_strides[1] as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `x` (`[in_c][n][in_h][in_w]`) into `[k][n * p_out]`.
fn im2col(g: &Conv, x: &[f64], n: usize) -> Vec<f64> {
    let np = n * g.p_out();
    let mut cols = vec![0.0; g.k() * np];
    for ic in 0..g.in_c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ic * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for e in 0..n {
                    let src = &x[(ic * n + e) * g.p_in()..(ic * n + e + 1) * g.p_in()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                        let drow = &mut dst[e * g.p_out() + oy * g.out_w..e * g.p_out() + (oy + 1) * g.out_w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(g: &Conv, cols: &[f64], n: usize) -> Vec<f64> {
    let np = n * g.p_out();
    let mut x = vec![0.0; g.in_c * n * g.p_in()];
    for ic in 0..g.in_c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ic * g.kh + ki) * g.kw + kj;
                let src = &cols[row * np..(row + 1) * np];
                for e in 0..n {
                    let dst = &mut x[(ic * n + e) * g.p_in()..(ic * n + e + 1) * g.p_in()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let srow = &src[e * g.p_out() + oy * g.out_w..e * g.p_out() + (oy + 1) * g.out_w];
                        let drow = &mut dst[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward(g: &Conv, w: &[f64], b: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    let np = n * g.p_out();
    let cols = im2col(g, x, n);
    let mut y = vec![0.0; g.out_c * np];
    for (o, row) in y.chunks_exact_mut(np).enumerate() {
        row.iter_mut().for_each(|v| *v = b[o]);
    }
    gemm(g.out_c, g.k(), np, w, [g.k(), 1], &cols, [np, 1], 1.0, &mut y);
    y
}

/// Accumulates weight and bias gradients into `grads`; returns the input
/// gradient when `want_dx`.
fn conv_backward(g: &Conv, w: &[f64], x: &[f64], n: usize, dy: &[f64], grads: &mut Grads, want_dx: bool) -> Option<Vec<f64>> {
    let np = n * g.p_out();
    let cols = im2col(g, x, n);
    gemm(g.out_c, np, g.k(), dy, [np, 1], &cols, [1, np], 1.0, &mut grads[g.param]);
    for (o, row) in dy.chunks_exact(np).enumerate() {
        grads[g.param + 1][o] += row.iter().sum::<f64>();
    }
    want_dx.then(|| {
        let mut dcols = vec![0.0; g.k() * np];
        gemm(g.k(), g.out_c, np, w, [1, g.k()], dy, [np, 1], 0.0, &mut dcols);
        col2im(g, &dcols, n)
    })
}
