use std::fmt;

use crate::error::{Error, Result};

/// File name of the per-step loss log inside a training directory.
pub const LOSS_LOG: &str = "losses.log";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub l1_loss: f64,
    pub g_total: f64,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_adv_loss, self.l1_loss, self.g_total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `step=.. d_loss=.. g_adv_loss=.. l1_loss=.. g_total=..` with
    /// round-trippable floats.
    pub fn to_line(&self) -> String {
        self.to_string()
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields = [None::<&str>; 5];
        const KEYS: [&str; 5] = ["step", "d_loss", "g_adv_loss", "l1_loss", "g_total"];
        for token in line.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("malformed loss log token {token:?}")))?;
            if let Some(i) = KEYS.iter().position(|k| *k == key) {
                fields[i] = Some(value);
            }
        }
        let get = |i: usize| fields[i].ok_or_else(|| Error::InvalidInput(format!("loss log line lacks {}", KEYS[i])));
        let float = |i: usize| -> Result<f64> {
            get(i)?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad {} value in loss log", KEYS[i])))
        };
        Ok(LossRecord {
            step: get(0)?
                .parse()
                .map_err(|_| Error::InvalidInput("bad step value in loss log".into()))?,
            d_loss: float(1)?,
            g_adv_loss: float(2)?,
            l1_loss: float(3)?,
            g_total: float(4)?,
        })
    }
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} d_loss={} g_adv_loss={} l1_loss={} g_total={}",
            self.step, self.d_loss, self.g_adv_loss, self.l1_loss, self.g_total
        )
    }
}

/// Parses every non-blank line of a loss log.
pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LossRecord::parse_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip() {
        let r = LossRecord {
            step: 17,
            d_loss: 1.234_567_890_123,
            g_adv_loss: 0.1 + 0.2,
            l1_loss: 3e-9,
            g_total: 123.0,
        };
        let text = format!("{}\n\n{}\n", r.to_line(), r.to_line());
        assert_eq!(parse_loss_log(&text).unwrap(), vec![r, r]);
        assert!(LossRecord::parse_line("step=1 d_loss=oops").is_err());
    }
}
