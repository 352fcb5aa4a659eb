use std::cell::RefCell;

use crate::numerics::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &mut GradStore)>;

struct Node {
    value: Tensor,
    back: Option<BackFn>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    fn add_to(&mut self, var: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
        let slot = &mut self.grads[var.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    /// Gradient of the given variable; zeros when the variable was not
    /// reachable from the loss.
    pub fn grad(&self, var: Var, shape: &[usize]) -> Tensor {
        match &self.grads[var.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn has_grad(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Define-by-run computation tape.
///
/// Operations append nodes in execution order, which is already a
/// topological order, so the backward sweep is a single reverse pass.
/// A tape is single-threaded; independent tapes may run on independent
/// threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    nan_check: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            nan_check: false,
        }
    }

    /// Scan every op output for non-finite values and fail with the op
    /// name. Off by default.
    pub fn with_nan_check(mut self, on: bool) -> Self {
        self.nan_check = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: &'static str, value: Tensor, back: Option<BackFn>) -> Result<Var, NumericsError> {
        if self.nan_check && !value.all_finite() {
            return Err(NumericsError::NonFinite(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        Ok(Var(nodes.len() - 1))
    }

    /// Record an input tensor. Leaves have no backward function; their
    /// gradients are read from the store after [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push("leaf", value, None).expect("leaf push")
    }

    /// Record a constant. Identical to a leaf; the name documents intent
    /// (gradients accumulated into constants are simply never read).
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape_of(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    fn val(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let shape = ta.shape().to_vec();
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let sa = shape.clone();
        self.push(
            "add",
            Tensor::new(shape, data)?,
            Some(Box::new(move |g, store| {
                store.add_to(a, &sa, |d| {
                    for (di, gi) in d.iter_mut().zip(g.data()) {
                        *di += gi;
                    }
                });
                store.add_to(b, &sa, |d| {
                    for (di, gi) in d.iter_mut().zip(g.data()) {
                        *di += gi;
                    }
                });
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let nb = self.affine_const(b, -1.0, 0.0)?;
        self.add(a, nb)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::Shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let shape = ta.shape().to_vec();
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let sa = shape.clone();
        self.push(
            "mul",
            Tensor::new(shape, data)?,
            Some(Box::new(move |g, store| {
                store.add_to(a, &sa, |d| {
                    for ((di, gi), yi) in d.iter_mut().zip(g.data()).zip(tb.data()) {
                        *di += gi * yi;
                    }
                });
                store.add_to(b, &sa, |d| {
                    for ((di, gi), xi) in d.iter_mut().zip(g.data()).zip(ta.data()) {
                        *di += gi * xi;
                    }
                });
            })),
        )
    }

    /// k*x + c, elementwise with constants.
    pub fn affine_const(&self, x: Var, k: f64, c: f64) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        let shape = tx.shape().to_vec();
        let data = tx.data().iter().map(|v| k * v + c).collect();
        let sa = shape.clone();
        self.push(
            "affine_const",
            Tensor::new(shape, data)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &sa, |d| {
                    for (di, gi) in d.iter_mut().zip(g.data()) {
                        *di += k * gi;
                    }
                });
            })),
        )
    }

    pub fn scale(&self, x: Var, k: f64) -> Result<Var, NumericsError> {
        self.affine_const(x, k, 0.0)
    }

    fn unary(
        &self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        let shape = tx.shape().to_vec();
        let out: Vec<f64> = tx.data().iter().map(|v| f(*v)).collect();
        let out_copy = out.clone();
        let sa = shape.clone();
        self.push(
            op,
            Tensor::new(shape, out)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &sa, |d| {
                    for ((di, gi), (xi, yi)) in d
                        .iter_mut()
                        .zip(g.data())
                        .zip(tx.data().iter().zip(&out_copy))
                    {
                        *di += gi * df(*xi, *yi);
                    }
                });
            })),
        )
    }

    /// Numerically stable logistic sigmoid; saturates without overflow.
    pub fn sigmoid(&self, x: Var) -> Result<Var, NumericsError> {
        self.unary("sigmoid", x, stable_sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self, x: Var) -> Result<Var, NumericsError> {
        self.unary("relu", x, |v| v.max(0.0), |xi, _| if xi > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn log(&self, x: Var) -> Result<Var, NumericsError> {
        self.unary("log", x, f64::ln, |xi, _| 1.0 / xi)
    }

    // ---- broadcasting (bias row and per-row scalar only) ----

    /// Add a length-d bias vector to every row of an n×d matrix.
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tb) = (self.val(x), self.val(bias));
        if tx.rank() != 2 || tb.rank() != 1 || tx.cols() != tb.len() {
            return Err(NumericsError::Shape(format!(
                "add_row_bias: {:?} vs {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += tb.data()[c];
            }
        }
        self.push(
            "add_row_bias",
            Tensor::new(vec![n, d], data)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &[n, d], |dst| {
                    for (di, gi) in dst.iter_mut().zip(g.data()) {
                        *di += gi;
                    }
                });
                store.add_to(bias, &[d], |dst| {
                    for r in 0..n {
                        for c in 0..d {
                            dst[c] += g.data()[r * d + c];
                        }
                    }
                });
            })),
        )
    }

    /// Multiply row i of an n×d matrix by scalar p[i].
    pub fn mul_col(&self, p: Var, x: Var) -> Result<Var, NumericsError> {
        let (tp, tx) = (self.val(p), self.val(x));
        if tp.rank() != 1 || tx.rank() != 2 || tp.len() != tx.rows() {
            return Err(NumericsError::Shape(format!(
                "mul_col: {:?} vs {:?}",
                tp.shape(),
                tx.shape()
            )));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        for r in 0..n {
            let s = tp.data()[r];
            for c in 0..d {
                data[r * d + c] *= s;
            }
        }
        self.push(
            "mul_col",
            Tensor::new(vec![n, d], data)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &[n, d], |dst| {
                    for r in 0..n {
                        let s = tp.data()[r];
                        for c in 0..d {
                            dst[r * d + c] += g.data()[r * d + c] * s;
                        }
                    }
                });
                store.add_to(p, &[n], |dst| {
                    for r in 0..n {
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += g.data()[r * d + c] * tx.data()[r * d + c];
                        }
                        dst[r] += acc;
                    }
                });
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(NumericsError::Shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = ta.data()[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data()[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        self.push(
            "matmul",
            Tensor::new(vec![m, n], out)?,
            Some(Box::new(move |g, store| {
                // dA = G B^T, dB = A^T G
                store.add_to(a, &[m, k], |dst| {
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i * n + j] * tb.data()[l * n + j];
                            }
                            dst[i * k + l] += acc;
                        }
                    }
                });
                store.add_to(b, &[k, n], |dst| {
                    for l in 0..k {
                        for i in 0..m {
                            let av = ta.data()[i * k + l];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                dst[l * n + j] += av * g.data()[i * n + j];
                            }
                        }
                    }
                });
            })),
        )
    }

    pub fn transpose(&self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        if tx.rank() != 2 {
            return Err(NumericsError::Shape(format!(
                "transpose: rank-2 required, got {:?}",
                tx.shape()
            )));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                out[c * n + r] = tx.data()[r * d + c];
            }
        }
        self.push(
            "transpose",
            Tensor::new(vec![d, n], out)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &[n, d], |dst| {
                    for r in 0..n {
                        for c in 0..d {
                            dst[r * d + c] += g.data()[c * n + r];
                        }
                    }
                });
            })),
        )
    }

    // ---- structure ----

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows() {
            return Err(NumericsError::Shape(format!(
                "concat_cols: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (n, da, db) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (da + db));
        for r in 0..n {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        self.push(
            "concat_cols",
            Tensor::new(vec![n, da + db], data)?,
            Some(Box::new(move |g, store| {
                let w = da + db;
                store.add_to(a, &[n, da], |dst| {
                    for r in 0..n {
                        for c in 0..da {
                            dst[r * da + c] += g.data()[r * w + c];
                        }
                    }
                });
                store.add_to(b, &[n, db], |dst| {
                    for r in 0..n {
                        for c in 0..db {
                            dst[r * db + c] += g.data()[r * w + da + c];
                        }
                    }
                });
            })),
        )
    }

    /// Stack 1×d rows into an n×d matrix.
    pub fn concat_rows(&self, rows: &[Var]) -> Result<Var, NumericsError> {
        if rows.is_empty() {
            return Err(NumericsError::Contract("concat_rows: empty input".into()));
        }
        let parts: Vec<Tensor> = rows.iter().map(|v| self.val(*v)).collect();
        let d = parts[0].len();
        let mut data = Vec::with_capacity(parts.len() * d);
        for p in &parts {
            if p.len() != d {
                return Err(NumericsError::Shape(format!(
                    "concat_rows: row widths differ ({} vs {})",
                    d,
                    p.len()
                )));
            }
            data.extend_from_slice(p.data());
        }
        let n = parts.len();
        let owned: Vec<(Var, Vec<usize>)> = rows
            .iter()
            .zip(&parts)
            .map(|(v, p)| (*v, p.shape().to_vec()))
            .collect();
        self.push(
            "concat_rows",
            Tensor::new(vec![n, d], data)?,
            Some(Box::new(move |g, store| {
                for (r, (var, shape)) in owned.iter().enumerate() {
                    store.add_to(*var, shape, |dst| {
                        for c in 0..d {
                            dst[c] += g.data()[r * d + c];
                        }
                    });
                }
            })),
        )
    }

    /// Rows [start, end) of a rank-2 tensor.
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        if tx.rank() != 2 || start >= end || end > tx.rows() {
            return Err(NumericsError::Shape(format!(
                "slice_rows: [{start},{end}) of {:?}",
                tx.shape()
            )));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let data = tx.data()[start * d..end * d].to_vec();
        self.push(
            "slice_rows",
            Tensor::new(vec![end - start, d], data)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &[n, d], |dst| {
                    for (i, gi) in g.data().iter().enumerate() {
                        dst[start * d + i] += gi;
                    }
                });
            })),
        )
    }

    /// Single row i as a 1×d matrix.
    pub fn row(&self, x: Var, i: usize) -> Result<Var, NumericsError> {
        self.slice_rows(x, i, i + 1)
    }

    /// Elements [start, end) of a rank-1 tensor.
    pub fn slice_vec(&self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        if tx.rank() != 1 || start >= end || end > tx.len() {
            return Err(NumericsError::Shape(format!(
                "slice_vec: [{start},{end}) of {:?}",
                tx.shape()
            )));
        }
        let n = tx.len();
        let data = tx.data()[start..end].to_vec();
        self.push(
            "slice_vec",
            Tensor::vector(data),
            Some(Box::new(move |g, store| {
                store.add_to(x, &[n], |dst| {
                    for (i, gi) in g.data().iter().enumerate() {
                        dst[start + i] += gi;
                    }
                });
            })),
        )
    }

    /// Flatten an n×1 or 1×n matrix into a vector.
    pub fn flatten(&self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        let shape = tx.shape().to_vec();
        let n = tx.len();
        let data = tx.data().to_vec();
        let _ = n;
        self.push(
            "flatten",
            Tensor::vector(data),
            Some(Box::new(move |g, store| {
                store.add_to(x, &shape, |dst| {
                    for (di, gi) in dst.iter_mut().zip(g.data()) {
                        *di += gi;
                    }
                });
            })),
        )
    }

    /// Embedding-style lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tt = self.val(table);
        if tt.rank() != 2 {
            return Err(NumericsError::Shape(format!(
                "gather_rows: table rank {:?}",
                tt.shape()
            )));
        }
        let (v, d) = (tt.rows(), tt.cols());
        for id in ids {
            if *id >= v {
                return Err(NumericsError::Index(format!(
                    "gather_rows: id {} out of range (table has {} rows)",
                    id, v
                )));
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for id in ids {
            data.extend_from_slice(tt.row_slice(*id));
        }
        let ids_owned = ids.to_vec();
        self.push(
            "gather_rows",
            Tensor::new(vec![ids.len(), d], data)?,
            Some(Box::new(move |g, store| {
                store.add_to(table, &[v, d], |dst| {
                    for (r, id) in ids_owned.iter().enumerate() {
                        for c in 0..d {
                            dst[id * d + c] += g.data()[r * d + c];
                        }
                    }
                });
            })),
        )
    }

    // ---- reductions and normalizers ----

    pub fn sum_all(&self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        let s: f64 = tx.data().iter().sum();
        let shape = tx.shape().to_vec();
        self.push(
            "sum_all",
            Tensor::scalar(s),
            Some(Box::new(move |g, store| {
                let gi = g.data()[0];
                store.add_to(x, &shape, |dst| {
                    for d in dst.iter_mut() {
                        *d += gi;
                    }
                });
            })),
        )
    }

    /// Softmax over the last axis (rows of a matrix, or a whole vector),
    /// with max-subtraction stabilization.
    pub fn softmax_rows(&self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.val(x);
        let (n, d, shape) = match tx.rank() {
            1 => (1, tx.len(), vec![tx.len()]),
            2 => (tx.rows(), tx.cols(), tx.shape().to_vec()),
            _ => {
                return Err(NumericsError::Shape(format!(
                    "softmax_rows: rank 1 or 2 required, got {:?}",
                    tx.shape()
                )))
            }
        };
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            softmax_into(&tx.data()[r * d..(r + 1) * d], &mut out[r * d..(r + 1) * d]);
        }
        let y = out.clone();
        let sa = shape.clone();
        self.push(
            "softmax_rows",
            Tensor::new(shape, out)?,
            Some(Box::new(move |g, store| {
                store.add_to(x, &sa, |dst| {
                    for r in 0..n {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let yr = &y[r * d..(r + 1) * d];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            dst[r * d + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            })),
        )
    }

    /// Per-row normalization to zero mean and unit variance (ε inside the
    /// square root), then elementwise affine with gain and bias vectors.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.val(x), self.val(gain), self.val(bias));
        if tx.rank() != 2 || tg.len() != tx.cols() || tb.len() != tx.cols() {
            return Err(NumericsError::Shape(format!(
                "layer_norm: x {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let (n, d) = (tx.rows(), tx.cols());
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = tx.row_slice(r);
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        self.push(
            "layer_norm",
            Tensor::new(vec![n, d], out)?,
            Some(Box::new(move |g, store| {
                store.add_to(gain, &[d], |dst| {
                    for r in 0..n {
                        for c in 0..d {
                            dst[c] += g.data()[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                store.add_to(bias, &[d], |dst| {
                    for r in 0..n {
                        for c in 0..d {
                            dst[c] += g.data()[r * d + c];
                        }
                    }
                });
                store.add_to(x, &[n, d], |dst| {
                    for r in 0..n {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        // dxhat = g * gain
                        let mut m1 = 0.0; // mean of dxhat
                        let mut m2 = 0.0; // mean of dxhat * xhat
                        for c in 0..d {
                            let dh = gr[c] * tg.data()[c];
                            m1 += dh;
                            m2 += dh * hr[c];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for c in 0..d {
                            let dh = gr[c] * tg.data()[c];
                            dst[r * d + c] += inv_std[r] * (dh - m1 - hr[c] * m2);
                        }
                    }
                });
            })),
        )
    }

    // ---- fused, numerically-stable losses ----

    /// Sum over unmasked positions of the binary cross entropy between
    /// sigmoid(logit) and target, computed from logits without forming
    /// probabilities.
    pub fn bce_with_logits_sum(
        &self,
        logits: Var,
        targets: &[f64],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let tl = self.val(logits);
        if tl.rank() != 1 || tl.len() != targets.len() || tl.len() != mask.len() {
            return Err(NumericsError::Shape(format!(
                "bce_with_logits_sum: logits {:?}, targets {}, mask {}",
                tl.shape(),
                targets.len(),
                mask.len()
            )));
        }
        let n = tl.len();
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let x = tl.data()[i];
            let t = targets[i];
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        let targets_owned = targets.to_vec();
        let mask_owned = mask.to_vec();
        let tl_data = tl.data().to_vec();
        self.push(
            "bce_with_logits_sum",
            Tensor::scalar(total),
            Some(Box::new(move |g, store| {
                let gs = g.data()[0];
                store.add_to(logits, &[n], |dst| {
                    for i in 0..n {
                        if mask_owned[i] {
                            dst[i] += gs * (stable_sigmoid(tl_data[i]) - targets_owned[i]);
                        }
                    }
                });
            })),
        )
    }

    /// Sum over unmasked rows of −log softmax(row)[target].
    pub fn softmax_xent_sum(
        &self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let tl = self.val(logits);
        if tl.rank() != 2 || tl.rows() != targets.len() || tl.rows() != mask.len() {
            return Err(NumericsError::Shape(format!(
                "softmax_xent_sum: logits {:?}, targets {}, mask {}",
                tl.shape(),
                targets.len(),
                mask.len()
            )));
        }
        let (n, v) = (tl.rows(), tl.cols());
        for (i, t) in targets.iter().enumerate() {
            if *t >= v {
                return Err(NumericsError::Index(format!(
                    "softmax_xent_sum: target {} at row {} out of range {}",
                    t, i, v
                )));
            }
        }
        let mut total = 0.0;
        let mut probs = vec![0.0; n * v];
        for r in 0..n {
            let row = tl.row_slice(r);
            softmax_into(row, &mut probs[r * v..(r + 1) * v]);
            if mask[r] {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse: f64 = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                total += lse - row[targets[r]];
            }
        }
        let targets_owned = targets.to_vec();
        let mask_owned = mask.to_vec();
        self.push(
            "softmax_xent_sum",
            Tensor::scalar(total),
            Some(Box::new(move |g, store| {
                let gs = g.data()[0];
                store.add_to(logits, &[n, v], |dst| {
                    for r in 0..n {
                        if !mask_owned[r] {
                            continue;
                        }
                        for c in 0..v {
                            let onehot = if c == targets_owned[r] { 1.0 } else { 0.0 };
                            dst[r * v + c] += gs * (probs[r * v + c] - onehot);
                        }
                    }
                });
            })),
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Every node is visited exactly
    /// once; leaves not reachable from the loss end up with no stored
    /// gradient (read back as zeros).
    pub fn backward(&self, loss: Var) -> Result<GradStore, NumericsError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut store = GradStore {
            grads: (0..nodes.len()).map(|_| None).collect(),
        };
        store.grads[loss.0] = Some(Tensor::new(
            nodes[loss.0].value.shape().to_vec(),
            vec![1.0],
        )?);
        for i in (0..=loss.0).rev() {
            let g = match &store.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            if let Some(back) = &nodes[i].back {
                back(&g, &mut store);
            }
        }
        Ok(store)
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - mx).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
