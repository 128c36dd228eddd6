//! Registry of componentwise scalar functions with closed-form derivative
//! ladders.
//!
//! Each entry supplies `f` and its derivatives in `t` up to the order it
//! supports, plus the mixed derivatives in the shape parameter `beta` for
//! the parametric potentials. All formulas are exact closed forms; the
//! consistency test below probes every ladder against central finite
//! differences on a fixed grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Componentwise function kinds understood by the graph engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PwKind {
    /// Moreau envelope of `|.|`: quadratic of curvature `beta` inside
    /// `|t| <= 1/beta`, affine outside.
    Huber,
    /// `log(cosh(beta t)) / beta`.
    LogCosh,
    /// `huber_beta(t) - huber_1(t)`; 1-weakly convex.
    ShiftedHuber,
    /// Moreau-envelope surrogate of ReLU: quadratic on `(0, beta)`.
    SmoothedRelu,
    Softplus,
    Tanh,
    Sigmoid,
    /// `t * sigmoid(t)`.
    Silu,
    Square,
    /// `|t|`; no second derivative (total-variation use only).
    Absolute,
    /// `max(t, 0)^2`.
    PosSquare,
    Sqrt,
    Exp,
    /// `1 / t^2`.
    RecipSquare,
}

impl PwKind {
    /// Whether the function takes a shape parameter `beta`.
    pub fn has_param(self) -> bool {
        matches!(
            self,
            PwKind::Huber | PwKind::LogCosh | PwKind::ShiftedHuber | PwKind::SmoothedRelu
        )
    }

    /// Highest available derivative order in `t`.
    pub fn max_order(self) -> u8 {
        match self {
            PwKind::Absolute => 1,
            _ => 3,
        }
    }

    /// `d^order f / dt^order` at `t` (with shape parameter `beta` where
    /// applicable).
    pub fn eval<T: Scalar>(self, order: u8, t: T, beta: T) -> Result<T> {
        if order > self.max_order() {
            return Err(Error::Unsupported(format!(
                "{self:?} has no order-{order} derivative"
            )));
        }
        Ok(match self {
            PwKind::Huber => huber(order, t, beta),
            PwKind::ShiftedHuber => huber(order, t, beta) - huber(order, t, T::one()),
            PwKind::LogCosh => logcosh(order, t, beta),
            PwKind::SmoothedRelu => smoothed_relu(order, t, beta),
            PwKind::Softplus => softplus(order, t),
            PwKind::Tanh => tanh(order, t),
            PwKind::Sigmoid => sigmoid_ladder(order, t),
            PwKind::Silu => silu(order, t),
            PwKind::Square => match order {
                0 => t * t,
                1 => T::of(2.0) * t,
                2 => T::of(2.0),
                _ => T::zero(),
            },
            PwKind::Absolute => match order {
                0 => t.abs(),
                _ => sign(t),
            },
            PwKind::PosSquare => {
                let p = t.max(T::zero());
                match order {
                    0 => p * p,
                    1 => T::of(2.0) * p,
                    2 => {
                        if t > T::zero() {
                            T::of(2.0)
                        } else {
                            T::zero()
                        }
                    }
                    _ => T::zero(),
                }
            }
            PwKind::Sqrt => {
                let s = t.sqrt();
                match order {
                    0 => s,
                    1 => T::of(0.5) / s,
                    2 => T::of(-0.25) / (s * t),
                    _ => T::of(0.375) / (s * t * t),
                }
            }
            PwKind::Exp => t.exp(),
            PwKind::RecipSquare => {
                let r = T::one() / t;
                let r2 = r * r;
                match order {
                    0 => r2,
                    1 => T::of(-2.0) * r2 * r,
                    2 => T::of(6.0) * r2 * r2,
                    _ => T::of(-24.0) * r2 * r2 * r,
                }
            }
        })
    }

    /// `d/dbeta` of `d^order f / dt^order`; only parametric kinds.
    pub fn eval_beta<T: Scalar>(self, order: u8, t: T, beta: T) -> Result<T> {
        if !self.has_param() {
            return Err(Error::Unsupported(format!(
                "{self:?} has no shape parameter"
            )));
        }
        if order > 2 {
            return Err(Error::Unsupported(format!(
                "{self:?} has no mixed derivative at order {order}"
            )));
        }
        Ok(match self {
            // the huber_1 part of the shifted potential is beta-free
            PwKind::Huber | PwKind::ShiftedHuber => huber_beta(order, t, beta),
            PwKind::LogCosh => logcosh_beta(order, t, beta),
            PwKind::SmoothedRelu => smoothed_relu_beta(order, t, beta),
            _ => unreachable!(),
        })
    }
}

fn sign<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        T::one()
    } else if t < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn huber<T: Scalar>(order: u8, t: T, beta: T) -> T {
    let cut = T::one() / beta;
    if t.abs() > cut {
        match order {
            0 => t.abs() - cut / T::of(2.0),
            1 => sign(t),
            _ => T::zero(),
        }
    } else {
        match order {
            0 => beta / T::of(2.0) * t * t,
            1 => beta * t,
            2 => beta,
            _ => T::zero(),
        }
    }
}

fn huber_beta<T: Scalar>(order: u8, t: T, beta: T) -> T {
    let cut = T::one() / beta;
    if t.abs() > cut {
        match order {
            0 => T::one() / (T::of(2.0) * beta * beta),
            _ => T::zero(),
        }
    } else {
        match order {
            0 => t * t / T::of(2.0),
            1 => t,
            _ => T::one(),
        }
    }
}

/// `log(cosh(u))` computed without overflow.
fn log_cosh_stable<T: Scalar>(u: T) -> T {
    let a = u.abs();
    a + (-(T::of(2.0)) * a).exp().ln_1p() - T::of(std::f64::consts::LN_2)
}

fn logcosh<T: Scalar>(order: u8, t: T, beta: T) -> T {
    let u = beta * t;
    let th = u.tanh();
    let sech2 = T::one() - th * th;
    match order {
        0 => log_cosh_stable(u) / beta,
        1 => th,
        2 => beta * sech2,
        _ => T::of(-2.0) * beta * beta * sech2 * th,
    }
}

fn logcosh_beta<T: Scalar>(order: u8, t: T, beta: T) -> T {
    let u = beta * t;
    let th = u.tanh();
    let sech2 = T::one() - th * th;
    match order {
        0 => -log_cosh_stable(u) / (beta * beta) + t * th / beta,
        1 => t * sech2,
        _ => sech2 * (T::one() - T::of(2.0) * u * th),
    }
}

fn smoothed_relu<T: Scalar>(order: u8, t: T, beta: T) -> T {
    if t <= T::zero() {
        T::zero()
    } else if t < beta {
        match order {
            0 => t * t / (T::of(2.0) * beta),
            1 => t / beta,
            2 => T::one() / beta,
            _ => T::zero(),
        }
    } else {
        match order {
            0 => t - beta / T::of(2.0),
            1 => T::one(),
            _ => T::zero(),
        }
    }
}

fn smoothed_relu_beta<T: Scalar>(order: u8, t: T, beta: T) -> T {
    if t <= T::zero() {
        T::zero()
    } else if t < beta {
        match order {
            0 => -t * t / (T::of(2.0) * beta * beta),
            1 => -t / (beta * beta),
            _ => -T::one() / (beta * beta),
        }
    } else {
        match order {
            0 => -T::one() / T::of(2.0),
            _ => T::zero(),
        }
    }
}

fn softplus<T: Scalar>(order: u8, t: T) -> T {
    let s = sigmoid(t);
    match order {
        0 => t.max(T::zero()) + (-t.abs()).exp().ln_1p(),
        1 => s,
        2 => s * (T::one() - s),
        _ => s * (T::one() - s) * (T::one() - T::of(2.0) * s),
    }
}

fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

fn sigmoid_ladder<T: Scalar>(order: u8, t: T) -> T {
    let s = sigmoid(t);
    let d1 = s * (T::one() - s);
    match order {
        0 => s,
        1 => d1,
        2 => d1 * (T::one() - T::of(2.0) * s),
        _ => d1 * (T::one() - T::of(6.0) * s + T::of(6.0) * s * s),
    }
}

fn tanh<T: Scalar>(order: u8, t: T) -> T {
    let f = t.tanh();
    let sech2 = T::one() - f * f;
    match order {
        0 => f,
        1 => sech2,
        2 => T::of(-2.0) * f * sech2,
        _ => sech2 * (T::of(6.0) * f * f - T::of(2.0)),
    }
}

fn silu<T: Scalar>(order: u8, t: T) -> T {
    match order {
        0 => t * sigmoid(t),
        1 => sigmoid_ladder(0, t) + t * sigmoid_ladder(1, t),
        2 => T::of(2.0) * sigmoid_ladder(1, t) + t * sigmoid_ladder(2, t),
        _ => T::of(3.0) * sigmoid_ladder(2, t) + t * sigmoid_ladder(3, t),
    }
}
