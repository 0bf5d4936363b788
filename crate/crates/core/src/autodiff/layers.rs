//! Parameterized building blocks over [`Graph`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `x . W + b` with `W: [in x out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Dense> {
        let w = store.add(
            format!("{name}.w"),
            Tensor::fan_in_uniform(&[input, output], input, rng),
        )?;
        let b = store.add(
            format!("{name}.b"),
            Tensor::fan_in_uniform(&[output], input, rng),
        )?;
        Ok(Dense {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `same`-style padding of `(kernel - 1) / 2`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Conv2d> {
        let fan_in = in_ch * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            Tensor::fan_in_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
        )?;
        let b = store.add(
            format!("{name}.b"),
            Tensor::fan_in_uniform(&[out_ch], fan_in, rng),
        )?;
        Ok(Conv2d {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        })
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Single LSTM cell; gate order in the fused weights is input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<LstmCell> {
        let fan_in = input + hidden;
        let wx = store.add(
            format!("{name}.wx"),
            Tensor::fan_in_uniform(&[input, 4 * hidden], fan_in, rng),
        )?;
        let wh = store.add(
            format!("{name}.wh"),
            Tensor::fan_in_uniform(&[hidden, 4 * hidden], fan_in, rng),
        )?;
        let b = store.add(
            format!("{name}.b"),
            Tensor::fan_in_uniform(&[4 * hidden], fan_in, rng),
        )?;
        Ok(LstmCell {
            wx,
            wh,
            b,
            input,
            hidden,
        })
    }

    /// One step on a batch: `x: [B x input]`, `h, c: [B x hidden]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let wx = g.param(self.wx);
        let wh = g.param(self.wh);
        let b = g.param(self.b);
        let xs = g.matmul(x, wx)?;
        let hs = g.matmul(h, wh)?;
        let pre = g.add(xs, hs)?;
        let pre = g.add_bias(pre, b)?;
        let i = g.slice_cols(pre, 0, hd)?;
        let f = g.slice_cols(pre, hd, 2 * hd)?;
        let u = g.slice_cols(pre, 2 * hd, 3 * hd)?;
        let o = g.slice_cols(pre, 3 * hd, 4 * hd)?;
        let (i, f, u, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(u), g.sigmoid(o));
        let keep = g.mul(f, c)?;
        let write = g.mul(i, u)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Run left-to-right over `steps` (each `[B x input]`) from zero state; returns the final hidden state.
    pub fn run(&self, g: &mut Graph, steps: &[Var]) -> Result<Var> {
        let first = *steps
            .first()
            .ok_or_else(|| Error::usage("LSTM over an empty sequence"))?;
        let batch = g.shape(first)[0];
        let mut h = g.input(Tensor::zeros(&[batch, self.hidden]));
        let mut c = g.input(Tensor::zeros(&[batch, self.hidden]));
        for &x in steps {
            (h, c) = self.step(g, x, h, c)?;
        }
        Ok(h)
    }
}

/// Lookup table `[vocab x dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, table: Tensor) -> Result<Embedding> {
        let shape = table.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "embedding",
                lhs: shape,
                rhs: vec![2],
            });
        }
        let table_id = store.add(format!("{name}.table"), table)?;
        Ok(Embedding {
            table: table_id,
            vocab: shape[0],
            dim: shape[1],
        })
    }

    pub fn lookup(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}
