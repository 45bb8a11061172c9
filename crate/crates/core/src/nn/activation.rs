#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            // log(1 + e^x) without overflow
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            _ => return None,
        })
    }

    /// Inverse of `apply` where it exists; used to place a bias so that the
    /// activated output hits a target value.
    pub fn inverse(self, y: f64) -> Option<f64> {
        match self {
            Activation::Identity => Some(y),
            Activation::Tanh if y.abs() < 1.0 => Some(y.atanh()),
            Activation::Sigmoid if y > 0.0 && y < 1.0 => Some((y / (1.0 - y)).ln()),
            Activation::Softplus if y > 0.0 => Some(y + (-(-y).exp_m1()).ln()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
    ];

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        for act in ALL {
            for &x in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-9, "{act:?} at {x}");
                let fd2 = (act.derivative(x + h) - act.derivative(x - h)) / (2.0 * h);
                assert!((fd2 - act.second_derivative(x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softplus_is_stable_and_invertible() {
        assert!((Activation::Softplus.apply(800.0) - 800.0).abs() < 1e-12);
        assert!(Activation::Softplus.apply(-800.0) >= 0.0);
        for &y in &[1e-3, 0.5, 1.0, std::f64::consts::SQRT_2, 20.0] {
            let x = Activation::Softplus.inverse(y).unwrap();
            assert!((Activation::Softplus.apply(x) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
