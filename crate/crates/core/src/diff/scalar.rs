use std::ops::{Add, Div, Mul, Neg, Sub};

use super::graph::{OpKind, Var};

/// LeakyReLU; the kink at zero takes the negative-side slope.
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    x * leaky_relu_slope(x, slope)
}

/// Derivative of [`leaky_relu`] at `x`.
pub fn leaky_relu_slope(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numeric type an expression can be evaluated over.
///
/// `lift` turns a plain constant into a value living in the same context as
/// `self` (the same graph for [`Var`], a zero-tangent dual for [`Dual`]).
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn value(&self) -> f64;
    fn lift(&self, c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
    fn offset(self, c: f64) -> Self;
    fn leaky_relu(self, slope: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    /// Euclidean norm of a nonempty slice. The gradient at the origin is 0.
    fn l2_norm(xs: &[Self]) -> Self;
    /// Sum of a nonempty slice.
    fn sum(xs: &[Self]) -> Self;
}

/// A vector-valued map that can be evaluated over any [`Scalar`].
pub trait VectorFn {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S>;

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.apply(z)
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn offset(self, c: f64) -> Self {
        self + c
    }
    fn leaky_relu(self, slope: f64) -> Self {
        leaky_relu(self, slope)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn l2_norm(xs: &[Self]) -> Self {
        xs.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, OpKind::Add, self.value() + rhs.value(), 1.0, 1.0)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.binary(rhs, OpKind::Sub, self.value() - rhs.value(), 1.0, -1.0)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, OpKind::Mul, a * b, b, a)
    }
}

impl<'g> Div for Var<'g> {
    type Output = Var<'g>;
    fn div(self, rhs: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, OpKind::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.unary(OpKind::Neg, -self.value(), -1.0)
    }
}

impl<'g> Scalar for Var<'g> {
    fn value(&self) -> f64 {
        Var::value(self)
    }
    fn lift(&self, c: f64) -> Self {
        self.graph().apply(OpKind::Constant, &[], c, &[])
    }
    fn scale(self, c: f64) -> Self {
        self.unary(OpKind::Scale, self.value() * c, c)
    }
    fn offset(self, c: f64) -> Self {
        self.unary(OpKind::Offset, self.value() + c, 1.0)
    }
    fn leaky_relu(self, slope: f64) -> Self {
        let x = self.value();
        let d = leaky_relu_slope(x, slope);
        self.unary(OpKind::LeakyRelu { slope }, x * d, d)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(OpKind::Exp, e, e)
    }
    fn ln(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Ln, x.ln(), 1.0 / x)
    }
    fn sin(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Sin, x.sin(), x.cos())
    }
    fn cos(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Cos, x.cos(), -x.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        self.unary(OpKind::Sqrt, s, 0.5 / s)
    }
    fn l2_norm(xs: &[Self]) -> Self {
        let values: Vec<f64> = xs.iter().map(|x| x.value()).collect();
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        let partials: Vec<f64> = if norm > 0.0 {
            values.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; xs.len()]
        };
        xs[0].graph().apply(OpKind::Norm, xs, norm, &partials)
    }
    fn sum(xs: &[Self]) -> Self {
        let total = xs.iter().map(|x| x.value()).sum();
        xs[0].graph().apply(OpKind::Sum, xs, total, &vec![1.0; xs.len()])
    }
}

/// Forward-mode number whose primal and tangent are both graph nodes.
/// A `None` tangent is an exact structural zero.
#[derive(Clone, Copy, Debug)]
pub struct Dual<'g> {
    pub primal: Var<'g>,
    pub tangent: Option<Var<'g>>,
}

impl<'g> Dual<'g> {
    pub fn constant(primal: Var<'g>) -> Self {
        Dual { primal, tangent: None }
    }

    pub fn seeded(primal: Var<'g>, tangent: Var<'g>) -> Self {
        Dual { primal, tangent: Some(tangent) }
    }
}

fn add_tangents<'g>(a: Option<Var<'g>>, b: Option<Var<'g>>) -> Option<Var<'g>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

impl<'g> Add for Dual<'g> {
    type Output = Dual<'g>;
    fn add(self, rhs: Dual<'g>) -> Dual<'g> {
        Dual { primal: self.primal + rhs.primal, tangent: add_tangents(self.tangent, rhs.tangent) }
    }
}

impl<'g> Sub for Dual<'g> {
    type Output = Dual<'g>;
    fn sub(self, rhs: Dual<'g>) -> Dual<'g> {
        Dual { primal: self.primal - rhs.primal, tangent: add_tangents(self.tangent, rhs.tangent.map(|t| -t)) }
    }
}

impl<'g> Mul for Dual<'g> {
    type Output = Dual<'g>;
    fn mul(self, rhs: Dual<'g>) -> Dual<'g> {
        let left = self.tangent.map(|t| t * rhs.primal);
        let right = rhs.tangent.map(|t| self.primal * t);
        Dual { primal: self.primal * rhs.primal, tangent: add_tangents(left, right) }
    }
}

impl<'g> Div for Dual<'g> {
    type Output = Dual<'g>;
    fn div(self, rhs: Dual<'g>) -> Dual<'g> {
        let q = self.primal / rhs.primal;
        let numerator = add_tangents(self.tangent, rhs.tangent.map(|t| -(q * t)));
        Dual { primal: q, tangent: numerator.map(|t| t / rhs.primal) }
    }
}

impl<'g> Neg for Dual<'g> {
    type Output = Dual<'g>;
    fn neg(self) -> Dual<'g> {
        Dual { primal: -self.primal, tangent: self.tangent.map(|t| -t) }
    }
}

impl<'g> Scalar for Dual<'g> {
    fn value(&self) -> f64 {
        self.primal.value()
    }
    fn lift(&self, c: f64) -> Self {
        Dual::constant(self.primal.lift(c))
    }
    fn scale(self, c: f64) -> Self {
        Dual { primal: self.primal.scale(c), tangent: self.tangent.map(|t| t.scale(c)) }
    }
    fn offset(self, c: f64) -> Self {
        Dual { primal: self.primal.offset(c), tangent: self.tangent }
    }
    fn leaky_relu(self, slope: f64) -> Self {
        let d = leaky_relu_slope(self.primal.value(), slope);
        Dual { primal: self.primal.leaky_relu(slope), tangent: self.tangent.map(|t| t.scale(d)) }
    }
    fn exp(self) -> Self {
        let e = self.primal.exp();
        Dual { primal: e, tangent: self.tangent.map(|t| t * e) }
    }
    fn ln(self) -> Self {
        Dual { primal: self.primal.ln(), tangent: self.tangent.map(|t| t / self.primal) }
    }
    fn sin(self) -> Self {
        Dual { primal: self.primal.sin(), tangent: self.tangent.map(|t| t * self.primal.cos()) }
    }
    fn cos(self) -> Self {
        Dual { primal: self.primal.cos(), tangent: self.tangent.map(|t| -(t * self.primal.sin())) }
    }
    fn sqrt(self) -> Self {
        let s = self.primal.sqrt();
        Dual { primal: s, tangent: self.tangent.map(|t| t / s.scale(2.0)) }
    }
    fn l2_norm(xs: &[Self]) -> Self {
        let primals: Vec<Var<'g>> = xs.iter().map(|x| x.primal).collect();
        let norm = Var::l2_norm(&primals);
        let tangent = if norm.value() > 0.0 {
            xs.iter()
                .filter_map(|x| x.tangent.map(|t| x.primal * t))
                .reduce(|a, b| a + b)
                .map(|t| t / norm)
        } else {
            None
        };
        Dual { primal: norm, tangent }
    }
    fn sum(xs: &[Self]) -> Self {
        let primals: Vec<Var<'g>> = xs.iter().map(|x| x.primal).collect();
        let tangents: Vec<Var<'g>> = xs.iter().filter_map(|x| x.tangent).collect();
        Dual {
            primal: Var::sum(&primals),
            tangent: if tangents.is_empty() { None } else { Some(Var::sum(&tangents)) },
        }
    }
}
