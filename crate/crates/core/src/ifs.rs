//! Intuitionistic fuzzy image encoding.
//!
//! A grayscale slice becomes three planes: membership `mu`, non-membership
//! `nu`, and hesitation `pi = 1 - mu - nu`. Unlike an ordinary fuzzy set,
//! `nu` is not forced to be `1 - mu`; the gap `pi` models intensity
//! uncertainty (partial-volume pixels land where `pi` is largest). Planes
//! always satisfy `mu, nu, pi` in `[0, 1]` and `mu + nu + pi = 1`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How raw intensities map to membership degrees, applied per slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipSpec {
    /// Linear map sending the slice minimum to 0 and maximum to 1. A
    /// constant slice maps to all zeros (flagged, not an error) since empty
    /// scans are all background.
    MinMax,
    /// `exp(-(x - center)^2 / (2 width^2))`, peaking at 1 on `center`.
    Gaussian { center: f64, width: f64 },
    /// Logistic `1 / (1 + exp(-slope (x - center)))`.
    Sigmoid { slope: f64, center: f64 },
}

impl MembershipSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            MembershipSpec::MinMax => Ok(()),
            MembershipSpec::Gaussian { width, .. } if width <= 0.0 => Err(Error::invalid(
                format!("gaussian membership width {width} must be > 0"),
            )),
            MembershipSpec::Sigmoid { slope, .. } if slope <= 0.0 => Err(Error::invalid(
                format!("sigmoid membership slope {slope} must be > 0"),
            )),
            _ => Ok(()),
        }
    }
}

/// How membership turns into non-membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NegationSpec {
    /// `nu = 1 - mu`; hesitation collapses to zero and the encoding reduces
    /// to an ordinary fuzzy set.
    Standard,
    /// `nu = (1 - mu) / (1 + lambda mu)` with `lambda > 0`. Hesitation has
    /// the closed form `lambda mu (1 - mu) / (1 + lambda mu)`.
    Sugeno { lambda: f64 },
    /// `nu = (1 - mu^w)^(1/w)` with `w > 0`. Note `w > 1` pushes `mu + nu`
    /// above 1 for interior memberships, so such planes fail the hesitation
    /// constraint; only `w <= 1` yields a valid three-plane encoding.
    Yager { w: f64 },
}

impl NegationSpec {
    /// Sugeno negation with the `lambda > 0` bound checked up front.
    pub fn sugeno(lambda: f64) -> Result<Self> {
        let spec = NegationSpec::Sugeno { lambda };
        spec.validate()?;
        Ok(spec)
    }

    /// Yager complement with the `w > 0` bound checked up front.
    pub fn yager(w: f64) -> Result<Self> {
        let spec = NegationSpec::Yager { w };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NegationSpec::Standard => Ok(()),
            NegationSpec::Sugeno { lambda } if lambda <= 0.0 || !lambda.is_finite() => Err(
                Error::invalid(format!("sugeno lambda {lambda} must be finite and > 0")),
            ),
            NegationSpec::Yager { w } if w <= 0.0 || !w.is_finite() => {
                Err(Error::invalid(format!("yager w {w} must be finite and > 0")))
            }
            _ => Ok(()),
        }
    }
}

/// One encoded slice: three same-shape planes plus the specs that made them.
#[derive(Debug, Clone)]
pub struct IfsImage<S> {
    mu: Tensor<S>,
    nu: Tensor<S>,
    pi: Tensor<S>,
    membership: MembershipSpec,
    negation: NegationSpec,
    constant_input: bool,
}

impl<S: Scalar> IfsImage<S> {
    pub fn mu(&self) -> &Tensor<S> {
        &self.mu
    }

    pub fn nu(&self) -> &Tensor<S> {
        &self.nu
    }

    pub fn pi(&self) -> &Tensor<S> {
        &self.pi
    }

    pub fn membership(&self) -> MembershipSpec {
        self.membership
    }

    pub fn negation(&self) -> NegationSpec {
        self.negation
    }

    /// True when the source slice was constant under min-max normalization
    /// (the whole plane was mapped to membership 0).
    pub fn constant_input(&self) -> bool {
        self.constant_input
    }

    /// The three planes stacked into a `3 x H x W` tensor, channel order
    /// (mu, nu, pi).
    pub fn stacked(&self) -> Tensor<S> {
        let mut data = Vec::with_capacity(3 * self.mu.numel());
        data.extend_from_slice(self.mu.data());
        data.extend_from_slice(self.nu.data());
        data.extend_from_slice(self.pi.data());
        let (h, w) = (self.mu.shape()[0], self.mu.shape()[1]);
        Tensor::new(vec![3, h, w], data).expect("three equal planes")
    }
}

fn check_plane<S: Scalar>(image: &Tensor<S>, what: &str) -> Result<()> {
    if image.shape().len() != 2 {
        return Err(Error::invalid(format!(
            "{what} must be a 2-D plane, got shape {:?}",
            image.shape()
        )));
    }
    if !image.all_finite() {
        return Err(Error::invalid(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Maps raw intensities to membership degrees in `[0, 1]`. The boolean is
/// the constant-slice warning: true when min-max saw a constant plane and
/// produced all zeros.
pub fn normalize_membership<S: Scalar>(
    image: &Tensor<S>,
    spec: &MembershipSpec,
) -> Result<(Tensor<S>, bool)> {
    check_plane(image, "membership input")?;
    spec.validate()?;
    match *spec {
        MembershipSpec::MinMax => {
            let mut lo = image.data()[0];
            let mut hi = lo;
            for &v in image.data() {
                if v < lo {
                    lo = v;
                }
                if v > hi {
                    hi = v;
                }
            }
            if lo == hi {
                return Ok((Tensor::zeros(image.shape()), true));
            }
            let span = hi - lo;
            Ok((image.map(|v| (v - lo) / span), false))
        }
        MembershipSpec::Gaussian { center, width } => {
            let c = S::cast(center);
            let denom = S::cast(2.0 * width * width);
            Ok((image.map(|v| (-(v - c) * (v - c) / denom).exp()), false))
        }
        MembershipSpec::Sigmoid { slope, center } => {
            let a = S::cast(slope);
            let c = S::cast(center);
            Ok((image.map(|v| S::one() / (S::one() + (-a * (v - c)).exp())), false))
        }
    }
}

fn check_unit_range<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<()> {
    check_plane(t, what)?;
    if t.data().iter().any(|&v| v < S::zero() || v > S::one()) {
        return Err(Error::invalid(format!("{what} values must lie in [0, 1]")));
    }
    Ok(())
}

/// `nu = (1 - mu) / (1 + lambda mu)`, strictly decreasing in `mu`.
pub fn sugeno_nonmembership<S: Scalar>(mu: &Tensor<S>, lambda: f64) -> Result<Tensor<S>> {
    NegationSpec::Sugeno { lambda }.validate()?;
    check_unit_range(mu, "membership plane")?;
    let l = S::cast(lambda);
    Ok(mu.map(|m| (S::one() - m) / (S::one() + l * m)))
}

/// `nu = (1 - mu^w)^(1/w)`; at `w = 1` this is the standard complement.
pub fn yager_nonmembership<S: Scalar>(mu: &Tensor<S>, w: f64) -> Result<Tensor<S>> {
    NegationSpec::Yager { w }.validate()?;
    check_unit_range(mu, "membership plane")?;
    let w_s = S::cast(w);
    let inv_w = S::cast(1.0 / w);
    Ok(mu.map(|m| (S::one() - m.powf(w_s)).max(S::zero()).powf(inv_w)))
}

/// Non-membership under any negation spec.
pub fn nonmembership<S: Scalar>(mu: &Tensor<S>, spec: &NegationSpec) -> Result<Tensor<S>> {
    match *spec {
        NegationSpec::Standard => {
            check_unit_range(mu, "membership plane")?;
            Ok(mu.map(|m| S::one() - m))
        }
        NegationSpec::Sugeno { lambda } => sugeno_nonmembership(mu, lambda),
        NegationSpec::Yager { w } => yager_nonmembership(mu, w),
    }
}

/// `pi = 1 - mu - nu`. Rejects plane pairs where `mu + nu` exceeds 1 (beyond
/// 1e-12 slack): such pairs are not an intuitionistic encoding. Tiny negative
/// rounding residue inside the slack is clamped to zero.
pub fn hesitation<S: Scalar>(mu: &Tensor<S>, nu: &Tensor<S>) -> Result<Tensor<S>> {
    check_unit_range(mu, "membership plane")?;
    check_unit_range(nu, "non-membership plane")?;
    if !mu.same_shape(nu) {
        return Err(Error::shape("hesitation", mu.shape(), nu.shape()));
    }
    let slack = S::cast(1e-12);
    let mut out = Vec::with_capacity(mu.numel());
    for (&m, &n) in mu.data().iter().zip(nu.data()) {
        let p = S::one() - m - n;
        if p < -slack {
            return Err(Error::invalid(format!(
                "mu + nu = {} exceeds 1; not an intuitionistic pair",
                (m + n).as_f64()
            )));
        }
        out.push(p.max(S::zero()));
    }
    Tensor::new(mu.shape().to_vec(), out)
}

/// Full encoding: membership, non-membership, hesitation, stacked into an
/// [`IfsImage`] in that fixed order.
pub fn ifs_encode<S: Scalar>(
    image: &Tensor<S>,
    mspec: &MembershipSpec,
    nspec: &NegationSpec,
) -> Result<IfsImage<S>> {
    nspec.validate()?;
    let (mu, constant_input) = normalize_membership(image, mspec)?;
    let nu = nonmembership(&mu, nspec)?;
    let pi = hesitation(&mu, &nu)?;
    Ok(IfsImage {
        mu,
        nu,
        pi,
        membership: *mspec,
        negation: *nspec,
        constant_input,
    })
}

/// Closed form of the Sugeno hesitation degree,
/// `lambda mu (1 - mu) / (1 + lambda mu)`; zero at `mu` of 0 or 1 and
/// maximal at `mu = (sqrt(1 + lambda) - 1) / lambda`.
pub fn sugeno_hesitation_closed_form(mu: f64, lambda: f64) -> f64 {
    lambda * mu * (1.0 - mu) / (1.0 + lambda * mu)
}
