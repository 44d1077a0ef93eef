//! Convolutional LSTM cell (no peepholes) and its unidirectional scan.

use super::{Conv, Init, ParamDecl, Session};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Forget-gate bias at initialization.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLstm {
    pub in_ch: usize,
    pub hidden: usize,
}

impl ConvLstm {
    fn gate_conv(&self) -> Conv {
        Conv::new(self.in_ch + self.hidden, self.hidden, 3)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        for gate in GATES {
            let start = out.len();
            self.gate_conv().declare(&format!("{prefix}.{gate}"), out);
            if gate == "forget" {
                out[start + 1].init = Init::Const(FORGET_BIAS);
            }
        }
    }

    /// One step: gates from a 3x3 conv over `[x; h]`, then
    /// `c' = f*c + i*g`, `h' = o*tanh(c')`.
    pub fn step(&self, s: &mut Session, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (xn, xc, xh, xw) = s.graph.value(x).dims4("convlstm_step")?;
        for (what, v) in [("hidden", h), ("cell", c)] {
            let dims = s.graph.value(v).dims4("convlstm_step")?;
            if dims != (xn, self.hidden, xh, xw) {
                return Err(Error::shape(
                    "convlstm_step",
                    format!("{what} state {dims:?} does not match input {:?}", (xn, xc, xh, xw)),
                ));
            }
        }
        if xc != self.in_ch {
            return Err(Error::shape("convlstm_step", format!("expected {} input channels, got {xc}", self.in_ch)));
        }
        let xh_cat = s.graph.concat_channels(&[x, h])?;
        let conv = self.gate_conv();
        let mut pre = Vec::with_capacity(4);
        for gate in GATES {
            pre.push(conv.forward(s, &format!("{prefix}.{gate}"), xh_cat)?);
        }
        let i = s.graph.sigmoid(pre[0]);
        let f = s.graph.sigmoid(pre[1]);
        let g = s.graph.tanh(pre[2]);
        let o = s.graph.sigmoid(pre[3]);
        let fc = s.graph.mul(f, c)?;
        let ig = s.graph.mul(i, g)?;
        let c_next = s.graph.add(fc, ig)?;
        let tc = s.graph.tanh(c_next);
        let h_next = s.graph.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Scans `seq` in order from zero state and returns the last hidden state.
    pub fn forward(&self, s: &mut Session, prefix: &str, seq: &[Var]) -> Result<Var> {
        let Some(&first) = seq.first() else {
            return Err(Error::invalid("convlstm_forward", "empty sequence"));
        };
        let (n, _, h, w) = s.graph.value(first).dims4("convlstm_forward")?;
        let zeros = Tensor::zeros(&[n, self.hidden, h, w]);
        let mut hs = s.input(zeros.clone());
        let mut cs = s.input(zeros);
        for &x in seq {
            (hs, cs) = self.step(s, prefix, x, hs, cs)?;
        }
        Ok(hs)
    }
}
