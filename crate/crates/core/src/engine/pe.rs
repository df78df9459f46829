//! Configurable PE.
//!
//! In data-packing mode (activation x weight) one PE holds a `pe_width`-bit
//! word of `pe_width / b_a` activation lanes and a single weight bit; every
//! lane is multiplied by that bit in one cycle. In bit-serial mode
//! (activation x activation) the packed word comes from the first operand and
//! the second operand is traversed one bit per cycle, so a full multiply takes
//! `b_a` cycles.

use crate::abstraction::QmmKind;
use crate::engine::config::Fault;
use crate::error::{Error, Result};
use crate::matrix::is_supported_bits;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PEMode {
    pub kind: QmmKind,
    pub act_bits: u8,
}

impl PEMode {
    pub fn new(kind: QmmKind, act_bits: u8) -> Result<Self> {
        if !is_supported_bits(act_bits) {
            return Err(Error::ModeMismatch(format!(
                "unsupported activation width {act_bits}"
            )));
        }
        Ok(Self { kind, act_bits })
    }

    /// Lanes packed into one PE word.
    pub fn lanes_per_pe(self, pe_width: u32) -> usize {
        (pe_width / self.act_bits as u32) as usize
    }

    /// Cycles to apply one element group.
    pub fn serial_cycles(self) -> u64 {
        match self.kind {
            QmmKind::ActivationWeight => 1,
            QmmKind::ActivationActivation => self.act_bits as u64,
        }
    }

    /// The `WbAb` / `AbxAb` tag used in reports.
    pub fn label(self) -> String {
        match self.kind {
            QmmKind::ActivationWeight => format!("W1A{}", self.act_bits),
            QmmKind::ActivationActivation => format!("A{0}xA{0}", self.act_bits),
        }
    }
}

/// Packs lane values into a PE word, lane 0 in the low bits.
pub fn pack_lanes(values: &[u8], act_bits: u8, pe_width: u32) -> Result<u64> {
    let lanes = (pe_width / act_bits as u32) as usize;
    if values.len() > lanes {
        return Err(Error::Encoding(format!(
            "{} lanes do not fit a {pe_width}-bit PE at {act_bits} bits",
            values.len()
        )));
    }
    let mut word = 0u64;
    for (l, &v) in values.iter().enumerate() {
        if v as u16 >= 1 << act_bits {
            return Err(Error::Encoding(format!(
                "lane value {v} does not fit {act_bits} bits"
            )));
        }
        word |= (v as u64) << (l as u32 * act_bits as u32);
    }
    Ok(word)
}

/// One PE cycle. `select_bit` is the weight bit (packing mode) or bit
/// `bit_index` of the serial operand (bit-serial mode). Writes one product per
/// lane into `out`.
pub(crate) fn pe_cycle_into(
    mode: PEMode,
    pe_width: u32,
    select_bit: u8,
    packed: u64,
    bit_index: u32,
    fault: Option<Fault>,
    out: &mut [i64],
) -> Result<()> {
    if select_bit > 1 {
        return Err(Error::Encoding(format!(
            "select bit {select_bit} is not a bit"
        )));
    }
    if pe_width < 64 && packed >> pe_width != 0 {
        return Err(Error::Encoding(format!(
            "packed word {packed:#x} exceeds {pe_width} bits"
        )));
    }
    let b = mode.act_bits as u32;
    let lane_bits = match fault {
        Some(Fault::LaneRule) => b - 1,
        None => b,
    };
    let mask = (1u64 << lane_bits) - 1;
    let shift = match mode.kind {
        QmmKind::ActivationWeight => 0,
        QmmKind::ActivationActivation => bit_index,
    };
    for (l, slot) in out.iter_mut().enumerate() {
        let lane = (packed >> (l as u32 * b)) & mask;
        *slot = ((lane * select_bit as u64) << shift) as i64;
    }
    Ok(())
}

pub fn pe_cycle(
    mode: PEMode,
    pe_width: u32,
    select_bit: u8,
    packed: u64,
    bit_index: u32,
) -> Result<Vec<i64>> {
    let mut out = vec![0i64; mode.lanes_per_pe(pe_width)];
    pe_cycle_into(
        mode, pe_width, select_bit, packed, bit_index, None, &mut out,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const AW: QmmKind = QmmKind::ActivationWeight;
    const AA: QmmKind = QmmKind::ActivationActivation;

    #[test]
    fn lane_rule() {
        for (b, lanes) in [(1, 8), (2, 4), (4, 2), (8, 1)] {
            let m = PEMode::new(AW, b).unwrap();
            assert_eq!(m.lanes_per_pe(8), lanes);
            assert_eq!(m.serial_cycles(), 1);
            let m = PEMode::new(AA, b).unwrap();
            assert_eq!(m.serial_cycles(), b as u64);
        }
    }

    #[test]
    fn w1a4_two_products_per_cycle() {
        let m = PEMode::new(AW, 4).unwrap();
        let word = pack_lanes(&[5, 3], 4, 8).unwrap();
        assert_eq!(pe_cycle(m, 8, 1, word, 0).unwrap(), vec![5, 3]);
        assert_eq!(pe_cycle(m, 8, 0, word, 0).unwrap(), vec![0, 0]);
    }

    #[test]
    fn a4xa4_bit_serial() {
        let m = PEMode::new(AA, 4).unwrap();
        let word = pack_lanes(&[5], 4, 8).unwrap();
        let b = 3u8;
        let partials: Vec<i64> = (0..4)
            .map(|t| pe_cycle(m, 8, (b >> t) & 1, word, t).unwrap()[0])
            .collect();
        assert_eq!(partials, vec![5, 10, 0, 0]);
        assert_eq!(partials.iter().sum::<i64>(), 15);
    }

    #[test]
    fn lane_overflow_is_an_encoding_error() {
        assert!(matches!(pack_lanes(&[16], 4, 8), Err(Error::Encoding(_))));
        assert!(matches!(
            pack_lanes(&[1, 1, 1], 4, 8),
            Err(Error::Encoding(_))
        ));
        let m = PEMode::new(AW, 4).unwrap();
        assert!(pe_cycle(m, 8, 1, 0x100, 0).is_err());
        assert!(pe_cycle(m, 8, 2, 0, 0).is_err());
    }
}
