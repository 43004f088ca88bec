//! Reverse-mode automatic differentiation on a flat tape of matrix
//! operations, with support for nested (higher-order) differentiation.
//!
//! Node values are row-major matrices; a typical graph holds layer weights
//! (out x in), biases (out x 1), coordinate batches (dim x n) and activation
//! rows. Elementwise binaries broadcast operands with a singleton row or
//! column dimension.
//!
//! [`Tape::grad`] appends the adjoint computation as ordinary nodes, so the
//! returned gradients are themselves differentiable; nesting `grad` yields
//! spatial derivatives of a network, gradients of losses built from them,
//! Hessian-vector products and mixed parameter/data contractions, all exact.
//!
//! Graphs are built once and re-evaluated: [`Tape::set_leaf`] replaces leaf
//! values and [`Tape::replay`] recomputes every dependent node in place,
//! which is what training loops use.

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// A (m,k) * B (k,n) -> (m,n)
    Gemm(u32, u32),
    /// A (m,k) * B^T with B (n,k) -> (m,n)
    GemmNT(u32, u32),
    /// A^T with A (k,m), times B (k,n) -> (m,n)
    GemmTN(u32, u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Tanh(u32),
    Scale(u32, f64),
    /// (m,n) -> (m,1)
    RowSum(u32),
    /// (m,n) -> (1,n)
    ColSum(u32),
    /// (m,n) -> (1,1)
    SumAll(u32),
    /// (m,n), r -> (1,n)
    SelectRow(u32, u32),
    /// (1,n), r, rows -> (rows,n), zero except row r
    PadRow(u32, u32, #[allow(dead_code)] u32),
}

pub struct Tape {
    ops: Vec<Op>,
    rows: Vec<u32>,
    cols: Vec<u32>,
    offs: Vec<usize>,
    vals: Vec<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            rows: Vec::new(),
            cols: Vec::new(),
            offs: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Drop all nodes but keep allocated capacity.
    pub fn reset(&mut self) {
        self.ops.clear();
        self.rows.clear();
        self.cols.clear();
        self.offs.clear();
        self.vals.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let i = v.0 as usize;
        (self.rows[i] as usize, self.cols[i] as usize)
    }

    pub fn val(&self, v: Var) -> &[f64] {
        let i = v.0 as usize;
        let n = (self.rows[i] * self.cols[i]) as usize;
        &self.vals[self.offs[i]..self.offs[i] + n]
    }

    /// Value of a 1x1 node.
    pub fn scalar_val(&self, v: Var) -> f64 {
        let s = self.val(v);
        debug_assert_eq!(s.len(), 1, "scalar_val on a non-scalar node");
        s[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> Var {
        let id = self.ops.len();
        assert!(id < u32::MAX as usize, "tape overflow");
        let off = self.vals.len();
        self.ops.push(op);
        self.rows.push(rows as u32);
        self.cols.push(cols as u32);
        self.offs.push(off);
        self.vals.reserve(rows * cols);
        // Values are written by exec; extend without zero-filling twice.
        self.vals.resize(off + rows * cols, 0.0);
        if !matches!(op, Op::Leaf) {
            self.exec(id);
        }
        Var(id as u32)
    }

    /// Matrix leaf with explicit shape; `values` is row-major.
    pub fn leaf(&mut self, rows: usize, cols: usize, values: &[f64]) -> Var {
        assert_eq!(values.len(), rows * cols, "leaf value length");
        let v = self.push(Op::Leaf, rows, cols);
        let off = self.offs[v.0 as usize];
        self.vals[off..off + values.len()].copy_from_slice(values);
        v
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(1, 1, &[value])
    }

    /// Row-vector leaf (1 x n).
    pub fn row(&mut self, values: &[f64]) -> Var {
        self.leaf(1, values.len(), values)
    }

    /// Replace the values of a leaf node.
    pub fn set_leaf(&mut self, v: Var, values: &[f64]) {
        let i = v.0 as usize;
        assert!(matches!(self.ops[i], Op::Leaf), "set_leaf on a computed node");
        let n = (self.rows[i] * self.cols[i]) as usize;
        assert_eq!(values.len(), n, "set_leaf value length");
        let off = self.offs[i];
        self.vals[off..off + n].copy_from_slice(values);
    }

    /// Recompute every non-leaf value in topological (id) order.
    pub fn replay(&mut self) {
        for id in 0..self.ops.len() {
            if !matches!(self.ops[id], Op::Leaf) {
                self.exec(id);
            }
        }
    }

    pub fn gemm(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "gemm inner dimensions");
        self.push(Op::Gemm(a.0, b.0), m, n)
    }

    pub fn gemm_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "gemm_nt inner dimensions");
        self.push(Op::GemmNT(a.0, b.0), m, n)
    }

    pub fn gemm_tn(&mut self, a: Var, b: Var) -> Var {
        let (k, m) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "gemm_tn inner dimensions");
        self.push(Op::GemmTN(a.0, b.0), m, n)
    }

    fn broadcast_shape(&self, a: Var, b: Var) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let r = ra.max(rb);
        let c = ca.max(cb);
        assert!(
            (ra == r || ra == 1) && (rb == r || rb == 1),
            "row broadcast mismatch: {ra} vs {rb}"
        );
        assert!(
            (ca == c || ca == 1) && (cb == c || cb == 1),
            "column broadcast mismatch: {ca} vs {cb}"
        );
        (r, c)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.broadcast_shape(a, b);
        self.push(Op::Add(a.0, b.0), r, c)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.broadcast_shape(a, b);
        self.push(Op::Sub(a.0, b.0), r, c)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.broadcast_shape(a, b);
        self.push(Op::Mul(a.0, b.0), r, c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.push(Op::Neg(a.0), r, c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.push(Op::Tanh(a.0), r, c)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        self.push(Op::Scale(a.0, k), r, c)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, _) = self.shape(a);
        self.push(Op::RowSum(a.0), r, 1)
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        let (_, c) = self.shape(a);
        self.push(Op::ColSum(a.0), 1, c)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.push(Op::SumAll(a.0), 1, 1)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn select_row(&mut self, a: Var, r: usize) -> Var {
        let (rows, c) = self.shape(a);
        assert!(r < rows, "row {r} out of {rows}");
        self.push(Op::SelectRow(a.0, r as u32), 1, c)
    }

    fn pad_row(&mut self, a: Var, r: usize, rows: usize) -> Var {
        let (ra, c) = self.shape(a);
        assert_eq!(ra, 1);
        assert!(r < rows);
        self.push(Op::PadRow(a.0, r as u32, rows as u32), rows, c)
    }

    fn exec(&mut self, id: usize) {
        let op = self.ops[id];
        let out_rows = self.rows[id] as usize;
        let out_cols = self.cols[id] as usize;
        let off = self.offs[id];
        let (head, tail) = self.vals.split_at_mut(off);
        let out = &mut tail[..out_rows * out_cols];
        let sh = |i: u32| -> (usize, usize, usize) {
            (
                self.offs[i as usize],
                self.rows[i as usize] as usize,
                self.cols[i as usize] as usize,
            )
        };
        match op {
            Op::Leaf => {}
            Op::Gemm(a, b) => {
                let (ao, _, k) = sh(a);
                let (bo, _, n) = sh(b);
                let av = &head[ao..];
                let bv = &head[bo..];
                for i in 0..out_rows {
                    let arow = &av[i * k..i * k + k];
                    let orow = &mut out[i * n..i * n + n];
                    orow.fill(0.0);
                    for (l, &ail) in arow.iter().enumerate() {
                        let brow = &bv[l * n..l * n + n];
                        for j in 0..n {
                            orow[j] += ail * brow[j];
                        }
                    }
                }
            }
            Op::GemmNT(a, b) => {
                // out[i][j] = sum_l a[i][l] b[j][l]
                let (ao, _, k) = sh(a);
                let (bo, _, _) = sh(b);
                let av = &head[ao..];
                let bv = &head[bo..];
                for i in 0..out_rows {
                    let arow = &av[i * k..i * k + k];
                    for j in 0..out_cols {
                        let brow = &bv[j * k..j * k + k];
                        let mut acc = 0.0;
                        for l in 0..k {
                            acc += arow[l] * brow[l];
                        }
                        out[i * out_cols + j] = acc;
                    }
                }
            }
            Op::GemmTN(a, b) => {
                // out[i][j] = sum_l a[l][i] b[l][j]
                let (ao, ka, m) = sh(a);
                let (bo, _, n) = sh(b);
                let av = &head[ao..];
                let bv = &head[bo..];
                out.fill(0.0);
                for l in 0..ka {
                    let arow = &av[l * m..l * m + m];
                    let brow = &bv[l * n..l * n + n];
                    for i in 0..m {
                        let ali = arow[i];
                        let orow = &mut out[i * n..i * n + n];
                        for j in 0..n {
                            orow[j] += ali * brow[j];
                        }
                    }
                }
            }
            Op::Add(a, b) => Self::ew_binary(head, out, out_rows, out_cols, sh(a), sh(b), |x, y| x + y),
            Op::Sub(a, b) => Self::ew_binary(head, out, out_rows, out_cols, sh(a), sh(b), |x, y| x - y),
            Op::Mul(a, b) => Self::ew_binary(head, out, out_rows, out_cols, sh(a), sh(b), |x, y| x * y),
            Op::Neg(a) => {
                let (ao, _, _) = sh(a);
                for (o, &x) in out.iter_mut().zip(&head[ao..ao + out_rows * out_cols]) {
                    *o = -x;
                }
            }
            Op::Tanh(a) => {
                let (ao, _, _) = sh(a);
                for (o, &x) in out.iter_mut().zip(&head[ao..ao + out_rows * out_cols]) {
                    *o = x.tanh();
                }
            }
            Op::Scale(a, s) => {
                let (ao, _, _) = sh(a);
                for (o, &x) in out.iter_mut().zip(&head[ao..ao + out_rows * out_cols]) {
                    *o = s * x;
                }
            }
            Op::RowSum(a) => {
                let (ao, r, c) = sh(a);
                let av = &head[ao..];
                for i in 0..r {
                    let mut acc = 0.0;
                    for &x in &av[i * c..i * c + c] {
                        acc += x;
                    }
                    out[i] = acc;
                }
            }
            Op::ColSum(a) => {
                let (ao, r, c) = sh(a);
                let av = &head[ao..];
                out.fill(0.0);
                for i in 0..r {
                    let arow = &av[i * c..i * c + c];
                    for j in 0..c {
                        out[j] += arow[j];
                    }
                }
            }
            Op::SumAll(a) => {
                let (ao, r, c) = sh(a);
                let mut acc = 0.0;
                for &x in &head[ao..ao + r * c] {
                    acc += x;
                }
                out[0] = acc;
            }
            Op::SelectRow(a, r) => {
                let (ao, _, c) = sh(a);
                out.copy_from_slice(&head[ao + r as usize * c..ao + (r as usize + 1) * c]);
            }
            Op::PadRow(a, r, _) => {
                let (ao, _, c) = sh(a);
                out.fill(0.0);
                out[r as usize * c..(r as usize + 1) * c].copy_from_slice(&head[ao..ao + c]);
            }
        }
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn ew_binary(
        head: &[f64],
        out: &mut [f64],
        rows: usize,
        cols: usize,
        (ao, ar, ac): (usize, usize, usize),
        (bo, br, bc): (usize, usize, usize),
        f: impl Fn(f64, f64) -> f64,
    ) {
        let a = &head[ao..ao + ar * ac];
        let b = &head[bo..bo + br * bc];
        if ar == rows && ac == cols && br == rows && bc == cols {
            for i in 0..rows * cols {
                out[i] = f(a[i], b[i]);
            }
            return;
        }
        let (ars, acs) = (if ar == 1 { 0 } else { ac }, if ac == 1 { 0 } else { 1 });
        let (brs, bcs) = (if br == 1 { 0 } else { bc }, if bc == 1 { 0 } else { 1 });
        for i in 0..rows {
            let abase = i * ars;
            let bbase = i * brs;
            let orow = &mut out[i * cols..(i + 1) * cols];
            if acs == 1 && bcs == 1 {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = f(a[abase + j], b[bbase + j]);
                }
            } else if acs == 1 {
                let bv = b[bbase];
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = f(a[abase + j], bv);
                }
            } else if bcs == 1 {
                let av = a[abase];
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = f(av, b[bbase + j]);
                }
            } else {
                let (av, bv) = (a[abase], b[bbase]);
                for o in orow.iter_mut() {
                    *o = f(av, bv);
                }
            }
        }
    }

    /// Adjoint contribution reduced over the dimensions the target broadcast
    /// (where the contribution is larger than the target). A contribution
    /// smaller than the target is left alone: accumulation and the
    /// materialization step broadcast it back out.
    fn reduce_to(&mut self, contrib: Var, target_rows: usize, target_cols: usize) -> Var {
        let (r, c) = self.shape(contrib);
        let reduce_rows = target_rows == 1 && r > 1;
        let reduce_cols = target_cols == 1 && c > 1;
        match (reduce_rows, reduce_cols) {
            (true, true) => self.sum_all(contrib),
            (true, false) => self.col_sum(contrib),
            (false, true) => self.row_sum(contrib),
            (false, false) => contrib,
        }
    }

    /// Expand a broadcast-shaped adjoint to the node's exact shape.
    fn materialize(&mut self, v: Var, rows: usize, cols: usize) -> Var {
        if self.shape(v) == (rows, cols) {
            return v;
        }
        let zero = self.leaf(rows, cols, &vec![0.0; rows * cols]);
        self.add(v, zero)
    }

    /// Reverse-mode gradient of a 1x1 `out` with respect to `wrt`.
    ///
    /// Appends adjoint nodes and returns one gradient per entry of `wrt`,
    /// materialized to the target shape (zeros when independent). Returned
    /// variables participate in further `grad` calls.
    pub fn grad(&mut self, out: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(out), (1, 1), "grad target must be 1x1");
        let n = out.0 as usize + 1;

        let mut from_wrt = vec![false; n];
        for w in wrt {
            if (w.0 as usize) < n {
                from_wrt[w.0 as usize] = true;
            }
        }
        for id in 0..n {
            if from_wrt[id] {
                continue;
            }
            from_wrt[id] = match self.ops[id] {
                Op::Leaf => false,
                Op::Gemm(a, b)
                | Op::GemmNT(a, b)
                | Op::GemmTN(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b) => from_wrt[a as usize] || from_wrt[b as usize],
                Op::Neg(a)
                | Op::Tanh(a)
                | Op::Scale(a, _)
                | Op::RowSum(a)
                | Op::ColSum(a)
                | Op::SumAll(a)
                | Op::SelectRow(a, _)
                | Op::PadRow(a, _, _) => from_wrt[a as usize],
            };
        }

        let mut to_out = vec![false; n];
        to_out[out.0 as usize] = true;
        for id in (0..n).rev() {
            if !to_out[id] {
                continue;
            }
            match self.ops[id] {
                Op::Leaf => {}
                Op::Gemm(a, b)
                | Op::GemmNT(a, b)
                | Op::GemmTN(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b) => {
                    to_out[a as usize] = true;
                    to_out[b as usize] = true;
                }
                Op::Neg(a)
                | Op::Tanh(a)
                | Op::Scale(a, _)
                | Op::RowSum(a)
                | Op::ColSum(a)
                | Op::SumAll(a)
                | Op::SelectRow(a, _)
                | Op::PadRow(a, _, _) => to_out[a as usize] = true,
            }
        }

        let active: Vec<bool> = (0..n).map(|i| from_wrt[i] && to_out[i]).collect();
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if active[out.0 as usize] {
            let one = self.scalar(1.0);
            adj[out.0 as usize] = Some(one);
        }
        let mut cached_one: Option<Var> = None;

        for id in (0..n).rev() {
            if !active[id] {
                continue;
            }
            let a_bar = match adj[id] {
                Some(v) => v,
                None => continue,
            };
            // Accumulated adjoints may be broadcast-shaped; the rules below
            // assume the node's exact shape.
            let (nr, nc) = (self.rows[id] as usize, self.cols[id] as usize);
            let a_bar = self.materialize(a_bar, nr, nc);
            match self.ops[id] {
                Op::Leaf => {}
                Op::Gemm(a, b) => {
                    if active[a as usize] {
                        let c = self.gemm_nt(a_bar, Var(b));
                        self.accumulate(&mut adj, &active, a, c);
                    }
                    if active[b as usize] {
                        let c = self.gemm_tn(Var(a), a_bar);
                        self.accumulate(&mut adj, &active, b, c);
                    }
                }
                Op::GemmNT(a, b) => {
                    if active[a as usize] {
                        let c = self.gemm(a_bar, Var(b));
                        self.accumulate(&mut adj, &active, a, c);
                    }
                    if active[b as usize] {
                        let c = self.gemm_tn(a_bar, Var(a));
                        self.accumulate(&mut adj, &active, b, c);
                    }
                }
                Op::GemmTN(a, b) => {
                    if active[a as usize] {
                        let c = self.gemm_nt(Var(b), a_bar);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                    if active[b as usize] {
                        let c = self.gemm(Var(a), a_bar);
                        self.accumulate(&mut adj, &active, b, c);
                    }
                }
                Op::Add(a, b) => {
                    self.acc_reduced(&mut adj, &active, a, a_bar);
                    self.acc_reduced(&mut adj, &active, b, a_bar);
                }
                Op::Sub(a, b) => {
                    self.acc_reduced(&mut adj, &active, a, a_bar);
                    if active[b as usize] {
                        let nb = self.neg(a_bar);
                        self.acc_reduced(&mut adj, &active, b, nb);
                    }
                }
                Op::Mul(a, b) => {
                    if active[a as usize] {
                        let c = self.mul(a_bar, Var(b));
                        self.acc_reduced(&mut adj, &active, a, c);
                    }
                    if active[b as usize] {
                        let c = self.mul(a_bar, Var(a));
                        self.acc_reduced(&mut adj, &active, b, c);
                    }
                }
                Op::Neg(a) => {
                    if active[a as usize] {
                        let c = self.neg(a_bar);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                }
                Op::Tanh(a) => {
                    if active[a as usize] {
                        let t = Var(id as u32);
                        let tt = self.mul(t, t);
                        let one = *cached_one.get_or_insert_with(|| {
                            let v = self.push(Op::Leaf, 1, 1);
                            let off = self.offs[v.0 as usize];
                            self.vals[off] = 1.0;
                            v
                        });
                        let om = self.sub(one, tt);
                        let c = self.mul(a_bar, om);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                }
                Op::Scale(a, s) => {
                    if active[a as usize] {
                        let c = self.scale(a_bar, s);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                }
                // Reductions broadcast their adjoint back over the summed
                // dimension; Add's broadcasting does the expansion.
                Op::RowSum(a) | Op::ColSum(a) | Op::SumAll(a) => {
                    self.acc_broadcast(&mut adj, &active, a, a_bar);
                }
                Op::SelectRow(a, r) => {
                    if active[a as usize] {
                        let rows = self.rows[a as usize] as usize;
                        let c = self.pad_row(a_bar, r as usize, rows);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                }
                Op::PadRow(a, r, _) => {
                    if active[a as usize] {
                        let c = self.select_row(a_bar, r as usize);
                        self.accumulate(&mut adj, &active, a, c);
                    }
                }
            }
        }

        wrt.iter()
            .map(|w| {
                let (r, c) = self.shape(*w);
                match adj.get(w.0 as usize).copied().flatten() {
                    Some(g) => {
                        let (gr, gc) = self.shape(g);
                        if (gr, gc) == (r, c) {
                            g
                        } else {
                            // Materialize a broadcast adjoint to the leaf shape.
                            let zero = self.leaf(r, c, &vec![0.0; r * c]);
                            self.add(g, zero)
                        }
                    }
                    None => self.leaf(r, c, &vec![0.0; r * c]),
                }
            })
            .collect()
    }

    /// True when `out` depends on any of `wrt` through the recorded graph.
    pub fn depends_on(&self, out: Var, wrt: &[Var]) -> bool {
        let n = out.0 as usize + 1;
        let mut from_wrt = vec![false; n];
        for w in wrt {
            if (w.0 as usize) < n {
                from_wrt[w.0 as usize] = true;
            }
        }
        for id in 0..n {
            if from_wrt[id] {
                continue;
            }
            from_wrt[id] = match self.ops[id] {
                Op::Leaf => false,
                Op::Gemm(a, b)
                | Op::GemmNT(a, b)
                | Op::GemmTN(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b) => from_wrt[a as usize] || from_wrt[b as usize],
                Op::Neg(a)
                | Op::Tanh(a)
                | Op::Scale(a, _)
                | Op::RowSum(a)
                | Op::ColSum(a)
                | Op::SumAll(a)
                | Op::SelectRow(a, _)
                | Op::PadRow(a, _, _) => from_wrt[a as usize],
            };
        }
        from_wrt[out.0 as usize]
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], active: &[bool], target: u32, contrib: Var) {
        if !active[target as usize] {
            return;
        }
        adj[target as usize] = Some(match adj[target as usize] {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Accumulate with reduction over dimensions the target broadcast.
    fn acc_reduced(&mut self, adj: &mut [Option<Var>], active: &[bool], target: u32, contrib: Var) {
        if !active[target as usize] {
            return;
        }
        let tr = self.rows[target as usize] as usize;
        let tc = self.cols[target as usize] as usize;
        let c = self.reduce_to(contrib, tr, tc);
        self.accumulate(adj, active, target, c);
    }

    /// Accumulate an adjoint that is smaller than the target (reduction
    /// backward): rely on add-broadcasting at combination time.
    fn acc_broadcast(
        &mut self,
        adj: &mut [Option<Var>],
        active: &[bool],
        target: u32,
        contrib: Var,
    ) {
        if !active[target as usize] {
            return;
        }
        adj[target as usize] = Some(match adj[target as usize] {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }
}
