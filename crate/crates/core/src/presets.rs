//! Reference architectures and their published weight totals.

use crate::error::Result;
use crate::lstm::LstmLayerConfig;
use crate::network::{count_parameters, LayerConfig, NetworkConfig, ParameterCount};

/// Published total for the MNIST pixel network.
pub const MNIST_REFERENCE_WEIGHTS: usize = 27_511;
/// Published total for the RGB texture segmentation network.
pub const TEXTURE_REFERENCE_WEIGHTS: usize = 43_257;

pub const MNIST_BLOCKS: usize = 25;
pub const TEXTURE_BLOCKS: usize = 25;
pub const TEXTURE_CLASSES: usize = 155;

/// 2D, four directions, LSTM with one cell per block, greyscale input,
/// ten digits plus background.
pub fn mnist(blocks: usize) -> NetworkConfig {
    NetworkConfig {
        layer: LayerConfig::Lstm(LstmLayerConfig::new(2, 1, blocks)),
        output_width: crate::data::MNIST_CLASSES,
        multidirectional: true,
    }
}

/// As [`mnist`] with RGB input and the texture class count.
pub fn texture(blocks: usize) -> NetworkConfig {
    NetworkConfig {
        layer: LayerConfig::Lstm(LstmLayerConfig::new(2, 3, blocks)),
        output_width: TEXTURE_CLASSES,
        multidirectional: true,
    }
}

/// Breakdown of `config` set against a published total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountComparison {
    pub count: ParameterCount,
    pub reference: usize,
}

impl CountComparison {
    pub fn new(config: &NetworkConfig, reference: usize) -> Result<Self> {
        Ok(CountComparison {
            count: count_parameters(config)?,
            reference,
        })
    }

    pub fn delta(&self) -> i64 {
        self.count.total as i64 - self.reference as i64
    }
}

impl std::fmt::Display for CountComparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}", self.count)?;
        writeln!(f, "{:<16}{:>10}", "reference", self.reference)?;
        write!(f, "{:<16}{:>+10}", "delta", self.delta())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::GroupKind;

    #[test]
    fn mnist_breakdown() {
        let c = CountComparison::new(&mnist(MNIST_BLOCKS), MNIST_REFERENCE_WEIGHTS).unwrap();
        // rows per block: cell, input gate, output gate, two forget gates
        assert_eq!(c.count.get(GroupKind::Input), 4 * 125);
        assert_eq!(c.count.get(GroupKind::Recurrent(0)), 4 * 125 * 25);
        assert_eq!(c.count.get(GroupKind::Peephole), 4 * 125);
        assert_eq!(c.count.get(GroupKind::Bias), 4 * 125);
        assert_eq!(c.count.get(GroupKind::OutputWeights), 11 * 100);
        assert_eq!(c.count.total, 27_611);
        assert_eq!(c.delta(), 100);
        let text = c.to_string();
        assert!(text.contains("reference") && text.contains("+100"));
    }

    #[test]
    fn texture_breakdown() {
        let c = CountComparison::new(&texture(TEXTURE_BLOCKS), TEXTURE_REFERENCE_WEIGHTS).unwrap();
        assert_eq!(c.count.get(GroupKind::Input), 4 * 125 * 3);
        assert_eq!(c.count.get(GroupKind::OutputWeights), 155 * 100);
        assert_eq!(c.count.total, 43_155);
        assert_eq!(c.delta(), -102);
    }
}
