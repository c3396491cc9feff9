//! Reverse-mode automatic differentiation over row-major 2-D tensors.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] accumulates
//! parameter gradients into a caller-owned buffer. Parameters are borrowed,
//! never copied onto the tape.

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// 3x3 kernel, stride 2, padding 1, over a pixel-major `[H*W, C]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, channels: usize) -> Self {
        Self {
            in_h,
            in_w,
            channels,
            out_h: (in_h - 1) / 2 + 1,
            out_w: (in_w - 1) / 2 + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        9 * self.channels
    }

    /// Input pixel feeding output `(oy, ox)` at kernel tap `(ky, kx)`, if inside the image.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (2 * oy + ky).checked_sub(1)?;
        let ix = (2 * ox + kx).checked_sub(1)?;
        (iy < self.in_h && ix < self.in_w).then_some(iy * self.in_w + ix)
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Exp(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Im2col {
        x: Var,
        geom: ConvGeom,
    },
    MulConst {
        x: Var,
        factor: Vec<T>,
    },
    DiffSum {
        x: Var,
        target: Vec<T>,
        mask: Vec<bool>,
        squared: bool,
    },
    KlSum {
        mean: Var,
        log_var: Var,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p, T> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "unknown parameter {index}");
        self.push(Op::Param(index), Tensor::zeros(0, 0), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols, bv.rows,
            "matmul shapes {}x{} · {}x{}",
            av.rows, av.cols, bv.rows, bv.cols
        );
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = Tensor::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            &av.data,
            k,
            1,
            &bv.data,
            n,
            1,
            T::zero(),
            &mut out.data,
            n,
            1,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out, ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_bt shapes");
        let (m, k, n) = (av.rows, av.cols, bv.rows);
        let mut out = Tensor::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            &av.data,
            k,
            1,
            &bv.data,
            1,
            k,
            T::zero(),
            &mut out.data,
            n,
            1,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulBT(a, b), out, ng)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!((bv.rows, bv.cols), (1, xv.cols), "bias shape");
        let mut out = xv.clone();
        for row in out.data.chunks_exact_mut(xv.cols) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += *b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(Op::AddBias(x, bias), out, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| *x + *y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "mul shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| *x * *y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_vec(xv.rows, xv.cols, xv.data.iter().map(|v| *v * s).collect());
        let ng = self.needs(x);
        self.push(Op::Scale(x, s), out, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_vec(
            xv.rows,
            xv.cols,
            xv.data.iter().map(|v| v.max(T::zero())).collect(),
        );
        let ng = self.needs(x);
        self.push(Op::Relu(x), out, ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_vec(xv.rows, xv.cols, xv.data.iter().map(|v| v.exp()).collect());
        let ng = self.needs(x);
        self.push(Op::Exp(x), out, ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols;
        assert_eq!((gv.len(), bv.len()), (n, n), "layer norm affine shape");
        let nf = T::from_usize(n).unwrap();
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data.chunks_exact(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (*v - mean) * r;
                xhat.push(h);
                out.push(h * gv.data[j] + bv.data[j]);
            }
        }
        let out = Tensor::from_vec(xv.rows, n, out);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            out,
            ng,
        )
    }

    /// Row-wise softmax; columns with `key_mask[c] == false` get probability 0.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let n = xv.cols;
        if let Some(m) = key_mask {
            assert_eq!(m.len(), n, "key mask length");
        }
        let keep = |c: usize| key_mask.map_or(true, |m| m[c]);
        let mut out = vec![T::zero(); xv.len()];
        for (row, o) in xv.data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let mut max = T::neg_infinity();
            for (c, v) in row.iter().enumerate() {
                if keep(c) && *v > max {
                    max = *v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            for c in 0..n {
                if keep(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::from_vec(xv.rows, n, out);
        let ng = self.needs(x);
        self.push(Op::Softmax(x), out, ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols, "column slice out of range");
        let mut data = Vec::with_capacity(xv.rows * len);
        for row in xv.data.chunks_exact(xv.cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_vec(xv.rows, len, data);
        let ng = self.needs(x);
        self.push(Op::SliceCols { x, start }, out, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_vec(rows, cols, data),
            ng,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows, "row slice out of range");
        let data = xv.data[start * xv.cols..(start + len) * xv.cols].to_vec();
        let out = Tensor::from_vec(len, xv.cols, data);
        let ng = self.needs(x);
        self.push(Op::SliceRows { x, start }, out, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_vec(rows, cols, data),
            ng,
        )
    }

    /// Unfolds 3x3 stride-2 patches into rows ordered `(ky, kx, channel)`.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        assert_eq!(
            (xv.rows, xv.cols),
            (geom.in_h * geom.in_w, geom.channels),
            "im2col input shape"
        );
        let c = geom.channels;
        let mut out = Tensor::zeros(geom.out_h * geom.out_w, geom.patch_len());
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                let dst = &mut out.data[(oy * geom.out_w + ox) * 9 * c..][..9 * c];
                for ky in 0..3 {
                    for kx in 0..3 {
                        if let Some(src) = geom.source(oy, ox, ky, kx) {
                            dst[(ky * 3 + kx) * c..][..c].copy_from_slice(xv.row(src));
                        }
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(Op::Im2col { x, geom }, out, ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(factor.len(), xv.len(), "mul_const shape");
        let data = xv.data.iter().zip(&factor).map(|(a, b)| *a * *b).collect();
        let out = Tensor::from_vec(xv.rows, xv.cols, data);
        let ng = self.needs(x);
        self.push(Op::MulConst { x, factor }, out, ng)
    }

    /// `Σ |x − target|` over entries where `mask` is set; a 1x1 result.
    pub fn abs_diff_sum(&mut self, x: Var, target: Vec<T>, mask: Vec<bool>) -> Var {
        self.diff_sum(x, target, mask, false)
    }

    /// `Σ (x − target)²` over entries where `mask` is set; a 1x1 result.
    pub fn sq_diff_sum(&mut self, x: Var, target: Vec<T>, mask: Vec<bool>) -> Var {
        self.diff_sum(x, target, mask, true)
    }

    fn diff_sum(&mut self, x: Var, target: Vec<T>, mask: Vec<bool>, squared: bool) -> Var {
        let xv = self.value(x);
        assert_eq!(
            (target.len(), mask.len()),
            (xv.len(), xv.len()),
            "diff_sum shape"
        );
        let mut s = T::zero();
        for i in 0..xv.len() {
            if mask[i] {
                let d = xv.data[i] - target[i];
                s += if squared { d * d } else { d.abs() };
            }
        }
        let ng = self.needs(x);
        self.push(
            Op::DiffSum {
                x,
                target,
                mask,
                squared,
            },
            Tensor::from_vec(1, 1, vec![s]),
            ng,
        )
    }

    /// `−½ Σ (1 + log_var − mean² − exp(log_var))`; a 1x1 result.
    pub fn kl_sum(&mut self, mean: Var, log_var: Var) -> Var {
        let s = kl_divergence(&self.value(mean).data, &self.value(log_var).data);
        let ng = self.needs(mean) || self.needs(log_var);
        self.push(
            Op::KlSum { mean, log_var },
            Tensor::from_vec(1, 1, vec![s]),
            ng,
        )
    }

    /// Backpropagates from the scalar `out`, adding into `param_grads`.
    pub fn backward(&self, out: Var, param_grads: &mut [Tensor<T>]) {
        assert_eq!(
            param_grads.len(),
            self.params.len(),
            "gradient buffer count"
        );
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::from_vec(1, 1, vec![T::one()]));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
                let n = &self.nodes[v.0];
                if !n.needs_grad {
                    return;
                }
                match n.op {
                    Op::Param(p) => f(&mut param_grads[p].data),
                    _ => {
                        let buf = grads[v.0]
                            .get_or_insert_with(|| Tensor::zeros(n.value.rows, n.value.cols));
                        f(&mut buf.data)
                    }
                }
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.cols);
                    acc(*a, &mut |da| {
                        T::gemm(m, n, k, &g.data, n, 1, &bv.data, 1, n, T::one(), da, k, 1)
                    });
                    acc(*b, &mut |db| {
                        T::gemm(k, m, n, &av.data, 1, k, &g.data, n, 1, T::one(), db, n, 1)
                    });
                }
                Op::MatMulBT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.rows);
                    acc(*a, &mut |da| {
                        T::gemm(m, n, k, &g.data, n, 1, &bv.data, k, 1, T::one(), da, k, 1)
                    });
                    acc(*b, &mut |db| {
                        T::gemm(n, m, k, &g.data, 1, n, &av.data, k, 1, T::one(), db, k, 1)
                    });
                }
                Op::AddBias(x, bias) => {
                    acc(*x, &mut |dx| add_into(dx, &g.data));
                    let cols = g.cols;
                    acc(*bias, &mut |db| {
                        for row in g.data.chunks_exact(cols) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |d| add_into(d, &g.data));
                    acc(*b, &mut |d| add_into(d, &g.data));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, &mut |d| {
                        for ((o, gi), y) in d.iter_mut().zip(&g.data).zip(&bv.data) {
                            *o += *gi * *y;
                        }
                    });
                    acc(*b, &mut |d| {
                        for ((o, gi), x) in d.iter_mut().zip(&g.data).zip(&av.data) {
                            *o += *gi * *x;
                        }
                    });
                }
                Op::Scale(x, s) => acc(*x, &mut |d| {
                    for (o, gi) in d.iter_mut().zip(&g.data) {
                        *o += *gi * *s;
                    }
                }),
                Op::Relu(x) => {
                    let y = &node.value.data;
                    acc(*x, &mut |d| {
                        for ((o, gi), yi) in d.iter_mut().zip(&g.data).zip(y) {
                            if *yi > T::zero() {
                                *o += *gi;
                            }
                        }
                    })
                }
                Op::Exp(x) => {
                    let y = &node.value.data;
                    acc(*x, &mut |d| {
                        for ((o, gi), yi) in d.iter_mut().zip(&g.data).zip(y) {
                            *o += *gi * *yi;
                        }
                    })
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let n = g.cols;
                    let gam = &self.value(*gamma).data;
                    acc(*gamma, &mut |d| {
                        for (grow, hrow) in g.data.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for j in 0..n {
                                d[j] += grow[j] * hrow[j];
                            }
                        }
                    });
                    acc(*beta, &mut |d| {
                        for grow in g.data.chunks_exact(n) {
                            add_into(d, grow);
                        }
                    });
                    let nf = T::from_usize(n).unwrap();
                    acc(*x, &mut |d| {
                        for (r, (grow, hrow)) in
                            g.data.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate()
                        {
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for j in 0..n {
                                let dh = grow[j] * gam[j];
                                m1 += dh;
                                m2 += dh * hrow[j];
                            }
                            m1 /= nf;
                            m2 /= nf;
                            let drow = &mut d[r * n..(r + 1) * n];
                            for j in 0..n {
                                drow[j] += rstd[r] * (grow[j] * gam[j] - m1 - hrow[j] * m2);
                            }
                        }
                    });
                }
                Op::Softmax(x) => {
                    let n = g.cols;
                    let p = &node.value.data;
                    acc(*x, &mut |d| {
                        for ((drow, grow), prow) in d
                            .chunks_exact_mut(n)
                            .zip(g.data.chunks_exact(n))
                            .zip(p.chunks_exact(n))
                        {
                            let dot: T = grow.iter().zip(prow).map(|(a, b)| *a * *b).sum();
                            for j in 0..n {
                                drow[j] += prow[j] * (grow[j] - dot);
                            }
                        }
                    })
                }
                Op::SliceCols { x, start } => {
                    let (len, cols) = (g.cols, self.value(*x).cols);
                    acc(*x, &mut |d| {
                        for (drow, grow) in d.chunks_exact_mut(cols).zip(g.data.chunks_exact(len)) {
                            add_into(&mut drow[*start..*start + len], grow);
                        }
                    })
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let total = g.cols;
                        acc(*p, &mut |d| {
                            for (drow, grow) in
                                d.chunks_exact_mut(w).zip(g.data.chunks_exact(total))
                            {
                                add_into(drow, &grow[offset..offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let cols = g.cols;
                    acc(*x, &mut |d| {
                        add_into(&mut d[start * cols..start * cols + g.len()], &g.data)
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        acc(*p, &mut |d| add_into(d, &g.data[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::Im2col { x, geom } => {
                    let c = geom.channels;
                    acc(*x, &mut |d| {
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let src = &g.data[(oy * geom.out_w + ox) * 9 * c..][..9 * c];
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        if let Some(p) = geom.source(oy, ox, ky, kx) {
                                            add_into(
                                                &mut d[p * c..(p + 1) * c],
                                                &src[(ky * 3 + kx) * c..][..c],
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    })
                }
                Op::MulConst { x, factor } => acc(*x, &mut |d| {
                    for ((o, gi), f) in d.iter_mut().zip(&g.data).zip(factor) {
                        *o += *gi * *f;
                    }
                }),
                Op::DiffSum {
                    x,
                    target,
                    mask,
                    squared,
                } => {
                    let g0 = g.data[0];
                    let two = T::lit(2.0);
                    let xv = &self.value(*x).data;
                    acc(*x, &mut |d| {
                        for i in 0..d.len() {
                            if mask[i] {
                                let diff = xv[i] - target[i];
                                if *squared {
                                    d[i] += g0 * two * diff;
                                } else if diff > T::zero() {
                                    d[i] += g0;
                                } else if diff < T::zero() {
                                    d[i] -= g0;
                                }
                            }
                        }
                    })
                }
                Op::KlSum { mean, log_var } => {
                    let g0 = g.data[0];
                    let (mv, lv) = (&self.value(*mean).data, &self.value(*log_var).data);
                    acc(*mean, &mut |d| {
                        for (o, m) in d.iter_mut().zip(mv) {
                            *o += g0 * *m;
                        }
                    });
                    let half = T::lit(0.5);
                    acc(*log_var, &mut |d| {
                        for (o, l) in d.iter_mut().zip(lv) {
                            *o += g0 * half * (l.exp() - T::one());
                        }
                    });
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Closed-form `KL(N(mean, exp(log_var)) ‖ N(0, I))`, summed over dimensions.
pub fn kl_divergence<T: Real>(mean: &[T], log_var: &[T]) -> T {
    assert_eq!(mean.len(), log_var.len());
    let mut s = T::zero();
    for (m, l) in mean.iter().zip(log_var) {
        s += T::one() + *l - *m * *m - l.exp();
    }
    -T::lit(0.5) * s
}
