use crate::money::{Credits, Probability};

/// Expected spend until the first satisfying call when each attempt succeeds
/// independently with probability `rho`: `cost / max(rho, rho_min)`.
pub fn geometric_cost(per_call_cost: &Credits, rho: &Probability, rho_min: &Probability) -> Credits {
    per_call_cost / &rho.clamp_min(rho_min)
}

pub fn total_calibrated_cost<'a>(costs: impl IntoIterator<Item = &'a Credits>) -> Credits {
    costs.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::money::Rational;
    use proptest::prelude::*;

    fn p(s: &str) -> Probability {
        s.parse().unwrap()
    }

    #[test]
    fn direct_division() {
        let floor = p("0.001");
        let c = geometric_cost(&Credits::from_int(38), &p("0.35"), &floor);
        assert_eq!(c.as_rational(), &Rational::new(760.into(), 7.into()));
        assert_eq!(format!("{:.3}", c.to_f64()), "108.571");
        assert_eq!(geometric_cost(&Credits::from_int(11), &Probability::one(), &floor), Credits::from_int(11));
        assert_eq!(geometric_cost(&Credits::from_int(10), &Probability::zero(), &floor), Credits::from_int(10_000));
    }

    proptest! {
        #[test]
        fn never_below_price(cost in 0i64..100_000, permille in 0u32..=1000) {
            let c = Credits::from_cents(cost);
            let rho = Probability::from_permille(permille).unwrap();
            prop_assert!(geometric_cost(&c, &rho, &p("0.001")) >= c);
        }
    }
}
