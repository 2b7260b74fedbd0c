//! A small reverse-mode tape over `f64` matrices.
//!
//! Only the operations the auto-encoder needs are provided. Every value is a
//! 2-D array; vectors are `1 x D` rows and scalars are `1 x 1`.

use ndarray::{Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        cols: Array2<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    MeanRows {
        x: Var,
    },
    StraightThrough {
        latent: Var,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    MeanSquaredRowDist {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unfolds `x` (`T x C`) into `T x (kernel * C)` with zero "same" padding.
fn im2col(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (t_len, c) = x.dim();
    let left = (kernel - 1) / 2;
    let mut cols = Array2::zeros((t_len, kernel * c));
    for t in 0..t_len {
        for j in 0..kernel {
            let src = t as isize + j as isize - left as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            cols.row_mut(t)
                .slice_mut(ndarray::s![j * c..(j + 1) * c])
                .assign(&x.row(src as usize));
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, kernel: usize, channels: usize) -> Array2<f64> {
    let t_len = dcols.nrows();
    let left = (kernel - 1) / 2;
    let mut dx = Array2::zeros((t_len, channels));
    for t in 0..t_len {
        for j in 0..kernel {
            let dst = t as isize + j as isize - left as isize;
            if dst < 0 || dst >= t_len as isize {
                continue;
            }
            let mut row = dx.row_mut(dst as usize);
            row += &dcols.row(t).slice(ndarray::s![j * channels..(j + 1) * channels]);
        }
    }
    dx
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A trainable tensor; `index` identifies it in [`Gradients::param`].
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(index))
    }

    /// Time convolution: `x` is `T x C_in`, `w` is `(kernel * C_in) x C_out`,
    /// `b` is `1 x C_out`. Output keeps `T` rows.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        let cols = im2col(self.value(x), kernel);
        let out = cols.dot(self.value(w)) + self.value(b);
        self.push(out, Op::Conv { x, w, b, kernel, cols })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    /// Adds the `1 x D` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let out = self.value(x) + &self.value(row).row(0);
        self.push(out, Op::AddRow { x, row })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub { a, b })
    }

    /// Column means, as a `1 x D` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("mean over zero frames")
            .insert_axis(Axis(0));
        self.push(out, Op::MeanRows { x })
    }

    /// Forward value `quantized`; backward copies the incoming gradient to
    /// `latent` unchanged.
    pub fn straight_through(&mut self, latent: Var, quantized: Array2<f64>) -> Var {
        debug_assert_eq!(self.value(latent).dim(), quantized.dim());
        self.push(quantized, Op::StraightThrough { latent })
    }

    /// Selects rows of `table`; gradients scatter back to the selected rows.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let out = self.value(table).select(Axis(0), indices);
        self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Mean of `|a - b|` over all elements.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "mean_abs_diff shape mismatch");
        let n = va.len().max(1) as f64;
        let s: f64 = va.iter().zip(vb.iter()).map(|(x, y)| (x - y).abs()).sum();
        self.push(Array2::from_elem((1, 1), s / n), Op::MeanAbsDiff { a, b })
    }

    /// Mean over rows of the squared Euclidean distance between rows.
    pub fn mean_squared_row_dist(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "mean_squared_row_dist shape mismatch");
        let rows = va.nrows().max(1) as f64;
        let s: f64 = va.iter().zip(vb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Array2::from_elem((1, 1), s / rows), Op::MeanSquaredRowDist { a, b })
    }

    /// `sum_i w_i * s_i` over scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s: f64 = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        self.push(
            Array2::from_elem((1, 1), s),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).dim()));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(acc) => *acc += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::Conv { x, w, b, kernel, cols } => {
                    let wv = self.value(*w);
                    accumulate(&mut grads, *w, cols.t().dot(&g));
                    accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dcols = g.dot(&wv.t());
                    let channels = self.value(*x).ncols();
                    accumulate(&mut grads, *x, col2im(&dcols, *kernel, channels));
                }
                Op::LeakyRelu { x, slope } => {
                    let mut dx = g.clone();
                    dx.zip_mut_with(self.value(*x), |d, &v| {
                        if v <= 0.0 {
                            *d *= slope
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::AddRow { x, row } => {
                    accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MeanRows { x } => {
                    let rows = self.value(*x).nrows();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    let dx = Array2::from_shape_fn((rows, row.len()), |(_, j)| row[j]);
                    accumulate(&mut grads, *x, dx);
                }
                Op::StraightThrough { latent } => {
                    accumulate(&mut grads, *latent, g.clone());
                }
                Op::Gather { table, indices } => {
                    let mut dt = Array2::zeros(self.value(*table).dim());
                    for (r, &k) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(k);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MeanAbsDiff { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let scale = g[[0, 0]] / va.len().max(1) as f64;
                    let mut da = va - vb;
                    da.mapv_inplace(|d| scale * sign(d));
                    accumulate(&mut grads, *b, -&da);
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanSquaredRowDist { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g[[0, 0]] / va.nrows().max(1) as f64;
                    let da = (va - vb) * scale;
                    accumulate(&mut grads, *b, -&da);
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, Array2::from_elem((1, 1), w * g[[0, 0]]));
                    }
                }
            }
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Summed gradient for parameter `index` over every node that registered it.
    pub fn param(&self, index: usize, shape: (usize, usize)) -> Array2<f64> {
        let mut acc = Array2::zeros(shape);
        for &(p, node) in &self.params {
            if p == index {
                if let Some(g) = &self.grads[node] {
                    acc += g;
                }
            }
        }
        acc
    }
}
