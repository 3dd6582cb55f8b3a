use super::array::{log_softmax_row, softmax_row, Array};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Producing operation of a node, with the parents it reads from.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    AddConst(Var, f64),
    MulConst(Var, f64),
    MatMul(Var, Var),
    AddRow(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Clamp(Var, f64, f64),
    Maximum(Var, Var),
    Minimum(Var, Var),
    /// Stop-gradient: keeps the parent for bookkeeping but never propagates.
    Detach(Var),
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::Gather(..) => "gather",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Clamp(..) => "clamp",
            Op::Maximum(..) => "maximum",
            Op::Minimum(..) => "minimum",
            Op::Detach(_) => "detach",
        }
    }

    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Maximum(a, b)
            | Op::Minimum(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::AddConst(a, _)
            | Op::MulConst(a, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Gather(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Clamp(a, ..)
            | Op::Detach(a) => vec![*a],
        }
    }
}

/// One recorded value with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Node {
    pub value: Array,
    pub grad: Array,
    pub op: Op,
}

/// Wengert list of nodes in creation order.
///
/// Parents are always created before their children, so the list is a
/// topological order and backward is a single reverse sweep.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[derive(Clone, Copy)]
enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Array {
        &self.nodes[v.0].grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        let grad = Array::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array::scalar(value))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (name, op) = match kind {
            Elementwise::Add => ("add", Op::Add(a, b)),
            Elementwise::Sub => ("sub", Op::Sub(a, b)),
            Elementwise::Mul => ("mul", Op::Mul(a, b)),
            Elementwise::Div => ("div", Op::Div(a, b)),
            Elementwise::Max => ("maximum", Op::Maximum(a, b)),
            Elementwise::Min => ("minimum", Op::Minimum(a, b)),
        };
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(name, va, vb)?;
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = va.data()[if va.len() == 1 { 0 } else { i }];
            let y = vb.data()[if vb.len() == 1 { 0 } else { i }];
            let z = match kind {
                Elementwise::Add => x + y,
                Elementwise::Sub => x - y,
                Elementwise::Mul => x * y,
                Elementwise::Div => {
                    if y == 0.0 {
                        return Err(AutodiffError::Domain { op: "div", index: i, value: y });
                    }
                    x / y
                }
                Elementwise::Max => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
                Elementwise::Min => {
                    if x <= y {
                        x
                    } else {
                        y
                    }
                }
            };
            out.push(z);
        }
        let value = Array::new(shape, out)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Mul, a, b)
    }

    /// Elementwise division; a zero divisor is a domain error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Div, a, b)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Max, a, b)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(Elementwise::Min, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| -x);
        self.push(value, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Natural log; any non-positive entry is a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = &self.nodes[a.0].value;
        if let Some((index, &value)) = va.data().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", index, value });
        }
        let value = va.map(f64::ln);
        Ok(self.push(value, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x + c);
        self.push(value, Op::AddConst(a, c))
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * c);
        self.push(value, Op::MulConst(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds the vector `row` to every row of the 2-D array `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let (m, n) = va.as_rows()?;
        if vr.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: va.shape().to_vec(),
                right: vr.shape().to_vec(),
            });
        }
        let mut out = va.data().to_vec();
        for i in 0..m {
            for (o, &r) in out[i * n..(i + 1) * n].iter_mut().zip(vr.data()) {
                *o += r;
            }
        }
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = &self.nodes[a.0].value;
        let (m, n) = va.as_rows()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&va.data()[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = &self.nodes[a.0].value;
        let (m, n) = va.as_rows()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            log_softmax_row(&va.data()[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LogSoftmaxRows(a)))
    }

    /// Index select over the flattened input: `out[i] = a.flat[indices[i]]`.
    pub fn gather(
        &mut self,
        a: Var,
        indices: Vec<usize>,
        shape: Vec<usize>,
    ) -> Result<Var, AutodiffError> {
        let va = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(indices.len());
        for &ix in &indices {
            match va.data().get(ix) {
                Some(&x) => out.push(x),
                None => {
                    return Err(AutodiffError::Construction(format!(
                        "gather index {ix} out of bounds for {} elements",
                        va.len()
                    )))
                }
            }
        }
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Gather(a, indices)))
    }

    /// Selects whole rows of a 2-D array.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let (m, n) = self.nodes[a.0].value.as_rows()?;
        let mut indices = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(AutodiffError::Construction(format!(
                    "row {r} out of bounds for {m} rows"
                )));
            }
            indices.extend(r * n..(r + 1) * n);
        }
        self.gather(a, indices, vec![rows.len(), n])
    }

    /// Picks column `cols[i]` from row `i`, producing a vector.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var, AutodiffError> {
        let (m, n) = self.nodes[a.0].value.as_rows()?;
        if cols.len() != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick",
                left: vec![m, n],
                right: vec![cols.len()],
            });
        }
        let mut indices = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(AutodiffError::Construction(format!(
                    "column {c} out of bounds for {n} columns"
                )));
            }
            indices.push(i * n + c);
        }
        self.gather(a, indices, vec![m])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let value = self.nodes[a.0].value.reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = &self.nodes[a.0].value;
        if va.is_empty() {
            return Err(AutodiffError::Construction("mean of an empty array".into()));
        }
        let m = va.data().iter().sum::<f64>() / va.len() as f64;
        Ok(self.push(Array::scalar(m), Op::Mean(a)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Copies the value of `a` into a node that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::Detach(a))
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Adjoints are computed fresh and then added into every node's `grad`,
    /// so a second call without [`Tape::zero_grad`] doubles all gradients.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot { shape: root_value.shape().to_vec() });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj)?;
            for (dst, src) in self.nodes[idx].grad.data_mut().iter_mut().zip(&g) {
                *dst += src;
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
    ) -> Result<(), AutodiffError> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: &Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Add(a, b) => {
                accumulate_bc(adj, *a, val(a).len(), g.len(), |i| g[i]);
                accumulate_bc(adj, *b, val(b).len(), g.len(), |i| g[i]);
            }
            Op::Sub(a, b) => {
                accumulate_bc(adj, *a, val(a).len(), g.len(), |i| g[i]);
                accumulate_bc(adj, *b, val(b).len(), g.len(), |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(a), val(b));
                accumulate_bc(adj, *a, xa.len(), g.len(), |i| g[i] * bc(xb, i));
                accumulate_bc(adj, *b, xb.len(), g.len(), |i| g[i] * bc(xa, i));
            }
            Op::Div(a, b) => {
                let (xa, xb) = (val(a), val(b));
                accumulate_bc(adj, *a, xa.len(), g.len(), |i| g[i] / bc(xb, i));
                accumulate_bc(adj, *b, xb.len(), g.len(), |i| {
                    let d = bc(xb, i);
                    -g[i] * bc(xa, i) / (d * d)
                });
            }
            Op::Maximum(a, b) => {
                let (xa, xb) = (val(a), val(b));
                let pick_a = |i: usize| bc(xa, i) >= bc(xb, i);
                accumulate_bc(adj, *a, xa.len(), g.len(), |i| if pick_a(i) { g[i] } else { 0.0 });
                accumulate_bc(adj, *b, xb.len(), g.len(), |i| if pick_a(i) { 0.0 } else { g[i] });
            }
            Op::Minimum(a, b) => {
                let (xa, xb) = (val(a), val(b));
                let pick_a = |i: usize| bc(xa, i) <= bc(xb, i);
                accumulate_bc(adj, *a, xa.len(), g.len(), |i| if pick_a(i) { g[i] } else { 0.0 });
                accumulate_bc(adj, *b, xb.len(), g.len(), |i| if pick_a(i) { 0.0 } else { g[i] });
            }
            Op::Neg(a) => accumulate(adj, *a, g.len(), |i| -g[i]),
            Op::Exp(a) => accumulate(adj, *a, g.len(), |i| g[i] * out[i]),
            Op::Log(a) => {
                let xa = val(a);
                accumulate(adj, *a, g.len(), |i| g[i] / xa[i]);
            }
            Op::Tanh(a) => accumulate(adj, *a, g.len(), |i| g[i] * (1.0 - out[i] * out[i])),
            Op::AddConst(a, _) => accumulate(adj, *a, g.len(), |i| g[i]),
            Op::MulConst(a, c) => accumulate(adj, *a, g.len(), |i| g[i] * c),
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = Array::new(node.value.shape().to_vec(), g.to_vec())?;
                let da = ga.matmul(&vb.transpose()?)?;
                let db = va.transpose()?.matmul(&ga)?;
                accumulate(adj, *a, da.len(), |i| da.data()[i]);
                accumulate(adj, *b, db.len(), |i| db.data()[i]);
            }
            Op::AddRow(a, row) => {
                accumulate(adj, *a, g.len(), |i| g[i]);
                let n = val(row).len();
                let mut col = vec![0.0; n];
                for (i, &gi) in g.iter().enumerate() {
                    col[i % n] += gi;
                }
                accumulate(adj, *row, n, |j| col[j]);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = node.value.as_rows()?;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let (y, gr) = (&out[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] = y[j] * (gr[j] - dot);
                    }
                }
                accumulate(adj, *a, d.len(), |i| d[i]);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = node.value.as_rows()?;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        d[r * n + j] = gr[j] - out[r * n + j].exp() * total;
                    }
                }
                accumulate(adj, *a, d.len(), |i| d[i]);
            }
            Op::Gather(a, indices) => {
                let mut d = vec![0.0; val(a).len()];
                for (gi, &ix) in g.iter().zip(indices) {
                    d[ix] += gi;
                }
                accumulate(adj, *a, d.len(), |i| d[i]);
            }
            Op::Reshape(a) => accumulate(adj, *a, g.len(), |i| g[i]),
            Op::Sum(a) => accumulate(adj, *a, val(a).len(), |_| g[0]),
            Op::Mean(a) => {
                let n = val(a).len();
                accumulate(adj, *a, n, |_| g[0] / n as f64);
            }
            Op::Clamp(a, lo, hi) => {
                let xa = val(a);
                accumulate(adj, *a, g.len(), |i| {
                    if xa[i] >= *lo && xa[i] <= *hi {
                        g[i]
                    } else {
                        0.0
                    }
                });
            }
        }
        Ok(())
    }
}

fn bc(x: &[f64], i: usize) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x[i]
    }
}

/// Adds a contribution into the adjoint of `target`.
fn accumulate(
    adj: &mut [Option<Vec<f64>>],
    target: Var,
    len: usize,
    contribution: impl Fn(usize) -> f64,
) {
    let slot = adj[target.0].get_or_insert_with(|| vec![0.0; len]);
    for (i, s) in slot.iter_mut().enumerate() {
        *s += contribution(i);
    }
}

/// Like [`accumulate`], but a single-element target broadcast over `out_len`
/// outputs receives the sum of all contributions.
fn accumulate_bc(
    adj: &mut [Option<Vec<f64>>],
    target: Var,
    target_len: usize,
    out_len: usize,
    contribution: impl Fn(usize) -> f64,
) {
    if target_len == out_len {
        accumulate(adj, target, target_len, contribution);
    } else {
        let total: f64 = (0..out_len).map(contribution).sum();
        accumulate(adj, target, 1, |_| total);
    }
}

fn broadcast_shape(op: &'static str, a: &Array, b: &Array) -> Result<Vec<usize>, AutodiffError> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}
