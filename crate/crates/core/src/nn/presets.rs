//! The four architectures used in the experiments.
//!
//! A max-pooling layer follows each convolution + ReLU; hidden fully-connected
//! layers are followed by ReLU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LayerSpec;
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// 28² → C5(20) → P2 → C5(40) → P2 → F150 → F10 → S
    MnistCnn,
    /// 784 → 2500 → 2000 → 10
    MnistMlp,
    /// 32² → C3(64) → P3 → C3(128) → P2 → C3(256) → P2 → F128 → F10 → S
    CifarCnn,
    /// 3072 → 4096 → 3072 → 10
    CifarMlp,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MnistCnn,
        Architecture::MnistMlp,
        Architecture::CifarCnn,
        Architecture::CifarMlp,
    ];

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Architecture::MnistCnn | Architecture::MnistMlp => [1, 28, 28],
            Architecture::CifarCnn | Architecture::CifarMlp => [3, 32, 32],
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let conv = |kernel, out_maps| ConvValid { kernel, out_maps };
        let fc = |out_units| FullyConnected { out_units };
        match self {
            Architecture::MnistCnn => vec![
                conv(5, 20),
                Relu,
                MaxPool { grid: 2 },
                conv(5, 40),
                Relu,
                MaxPool { grid: 2 },
                fc(150),
                Relu,
                fc(10),
                Softmax,
            ],
            Architecture::MnistMlp => vec![fc(2500), Relu, fc(2000), Relu, fc(10), Softmax],
            Architecture::CifarCnn => vec![
                conv(3, 64),
                Relu,
                MaxPool { grid: 3 },
                conv(3, 128),
                Relu,
                MaxPool { grid: 2 },
                conv(3, 256),
                Relu,
                MaxPool { grid: 2 },
                fc(128),
                Relu,
                fc(10),
                Softmax,
            ],
            Architecture::CifarMlp => vec![fc(4096), Relu, fc(3072), Relu, fc(10), Softmax],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::MnistCnn => "mnist_cnn",
            Architecture::MnistMlp => "mnist_mlp",
            Architecture::CifarCnn => "cifar_cnn",
            Architecture::CifarMlp => "cifar_mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown architecture preset `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    fn map_sizes(a: Architecture) -> Vec<Vec<usize>> {
        let net = Network::zeroed(a.input_shape(), a.layers()).unwrap();
        (0..=a.layers().len()).map(|i| net.activation_shape(i).to_vec()).collect()
    }

    #[test]
    fn cifar_cnn_map_sizes() {
        let s = map_sizes(Architecture::CifarCnn);
        assert_eq!(s[1], [64, 30, 30]);
        assert_eq!(s[3], [64, 10, 10]);
        assert_eq!(s[4], [128, 8, 8]);
        assert_eq!(s[6], [128, 4, 4]);
        assert_eq!(s[7], [256, 2, 2]);
        assert_eq!(s[9], [256, 1, 1]);
        assert_eq!(s[10], [128]);
        assert_eq!(s.last().unwrap(), &[10]);
    }

    #[test]
    fn mlp_sizes() {
        let s = map_sizes(Architecture::MnistMlp);
        assert_eq!([s[1][0], s[3][0], s[5][0]], [2500, 2000, 10]);
        let s = map_sizes(Architecture::CifarMlp);
        assert_eq!([s[1][0], s[3][0], s[5][0]], [4096, 3072, 10]);
    }

    #[test]
    fn parse_names() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("lenet".parse::<Architecture>().is_err());
    }
}
