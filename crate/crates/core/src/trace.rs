use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::format_f64;
use crate::error::Result;
use crate::ledger::UsageLedger;

/// States visited by a chain together with its usage ledger.
///
/// `states[0]` is the initial state; `states[t]` follows step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    dim: usize,
    states: Vec<f64>,
    pub ledger: UsageLedger,
    pub accept_flags: Vec<bool>,
}

impl ChainTrace {
    pub fn new(initial: &[f64], ledger: UsageLedger) -> Self {
        Self {
            dim: initial.len(),
            states: initial.to_vec(),
            ledger,
            accept_flags: Vec::new(),
        }
    }

    pub fn push(&mut self, theta: &[f64], accepted: bool, used: &[usize]) -> Result<()> {
        debug_assert_eq!(theta.len(), self.dim);
        self.ledger.record(used)?;
        self.states.extend_from_slice(theta);
        self.accept_flags.push(accepted);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (steps + 1).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }

    /// Component `j` across all stored states.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return 0.0;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    /// CSV with columns `step, theta_0.., accepted, batch_size, cumulative`.
    /// Row 0 is the initial state and leaves `accepted` empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_thinned(w, 1)
    }

    /// As [`ChainTrace::write_csv`], keeping rows whose step is a multiple
    /// of `thin`.
    pub fn write_csv_thinned<W: Write>(&self, mut w: W, thin: usize) -> Result<()> {
        let thin = thin.max(1);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.dim).map(|j| format!("theta_{j}")));
        header.extend(["accepted", "batch_size", "cumulative"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let sizes = self.ledger.step_sizes();
        let cum = self.ledger.cumulative_sizes();
        for t in (0..self.len()).step_by(thin) {
            let mut row = vec![t.to_string()];
            row.extend(self.state(t).iter().map(|v| format_f64(*v)));
            if t == 0 {
                row.extend([String::new(), "0".into(), "0".into()]);
            } else {
                row.push(u8::from(self.accept_flags[t - 1]).to_string());
                row.push(sizes[t - 1].to_string());
                row.push(cum[t - 1].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_exceed_steps_by_one() {
        let mut tr = ChainTrace::new(&[0.0, 1.0], UsageLedger::new(3));
        tr.push(&[0.5, 1.0], true, &[0, 2]).unwrap();
        tr.push(&[0.5, 1.0], false, &[1]).unwrap();
        assert_eq!(tr.len(), tr.ledger.steps() + 1);
        assert_eq!(tr.component(0), vec![0.0, 0.5, 0.5]);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,theta_0,theta_1,accepted,batch_size,cumulative");
        assert_eq!(lines[2], "1,0.5,1.0,1,2,2");
        assert_eq!(lines[3], "2,0.5,1.0,0,1,3");
    }
}
