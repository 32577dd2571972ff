use crate::error::{Error, Result};

/// Pseudo-random binary excitation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PrbsConfig {
    /// Shift register length in bits.
    pub order: u32,
    /// Initial register contents, nonzero.
    pub seed: u32,
    /// Samples each bit is held.
    pub hold: usize,
    pub low: f64,
    pub high: f64,
}

impl PrbsConfig {
    pub fn validate(&self) -> Result<()> {
        if max_length_taps(self.order).is_none() {
            return Err(Error::InvalidParameter(format!("PRBS order must be in 2..=16, got {}", self.order)));
        }
        if self.seed & ((1u32 << self.order) - 1) == 0 {
            return Err(Error::InvalidParameter("PRBS seed must be nonzero in the register bits".into()));
        }
        if self.hold == 0 {
            return Err(Error::InvalidParameter("PRBS hold must be at least one sample".into()));
        }
        if !(self.low < self.high) {
            return Err(Error::InvalidParameter(format!("PRBS levels need low < high, got {} and {}", self.low, self.high)));
        }
        Ok(())
    }
}

/// Feedback taps (1-based) of a maximal-length Fibonacci register.
pub fn max_length_taps(order: u32) -> Option<&'static [u32]> {
    Some(match order {
        2 => &[2, 1],
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 11, 10, 4],
        13 => &[13, 12, 11, 8],
        14 => &[14, 13, 12, 2],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        _ => return None,
    })
}

/// Register output bits, one per clock.
pub fn prbs_bits(order: u32, seed: u32, count: usize) -> Result<Vec<bool>> {
    let taps = max_length_taps(order)
        .ok_or_else(|| Error::InvalidParameter(format!("PRBS order must be in 2..=16, got {order}")))?;
    let mask = (1u32 << order) - 1;
    let mut reg = seed & mask;
    if reg == 0 {
        return Err(Error::InvalidParameter("PRBS seed must be nonzero in the register bits".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(reg & 1 == 1);
        let fb = taps.iter().fold(0, |acc, &t| acc ^ (reg >> (order - t)) & 1);
        reg = ((reg >> 1) | (fb << (order - 1))) & mask;
    }
    Ok(out)
}

/// Two-level signal of `length` samples; bit 1 maps to `high`.
pub fn prbs(cfg: &PrbsConfig, length: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let bits = prbs_bits(cfg.order, cfg.seed, length.div_ceil(cfg.hold))?;
    Ok((0..length)
        .map(|i| if bits[i / cfg.hold] { cfg.high } else { cfg.low })
        .collect())
}
