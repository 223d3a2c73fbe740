use oamap::analysis::{appendix_a_chain, appendix_b_chain, theorem1_check, theorem2_check};
use oamap::beam_channel::{ChannelMatrix, Position, ReferenceFrame, SystemConfig};
use oamap::constellation::{design_total_power, extract_power, DesignOptions, PowerVector};
use proptest::prelude::*;

fn channel(beta: f64, z: f64) -> ChannelMatrix {
    let cfg = SystemConfig::new(vec![60e9, 61e9], vec![0, 1], 4.0, 4).unwrap();
    cfg.channel_matrix(Position::Beta { beta, z }, &ReferenceFrame::new(0, 1).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn channel_perturbation_bound_holds(b1 in 0.2f64..2.2, z1 in 0.5f64..4.0, b2 in 0.2f64..2.2, z2 in 0.5f64..4.0) {
        let (h1, h2) = (channel(b1, z1), channel(b2, z2));
        let opts = DesignOptions::default().with_restarts(4);
        let t = theorem1_check(&h1, &h2, 4, 1.0, &opts).unwrap();
        prop_assert!(t.report.holds, "{:?}", t.report);
        let chain = appendix_a_chain(&h1, &h2, t.alpha, &t.c1, &t.c2).unwrap();
        prop_assert!(chain.overall);
    }

    #[test]
    fn power_perturbation_bound_holds(beta in 0.2f64..2.2, z in 0.5f64..4.0, shift in prop::collection::vec(0.0f64..0.2, 4)) {
        let h = channel(beta, z);
        let opts = DesignOptions::default().with_restarts(4);
        let total = design_total_power(&h, 4, 1.0, &opts).unwrap();
        let p_o = extract_power(&total.constellation);
        let p_f = PowerVector::new(p_o.values().iter().zip(&shift).map(|(p, s)| p + s).collect()).unwrap();
        if let Ok(t) = theorem2_check(&h, &p_o, &p_f, 4, &opts, Some(&total.constellation)) {
            prop_assert!(t.report.holds, "{:?}", t.report);
            let chain = appendix_b_chain(&h, &p_o, &p_f, &t.s_o, &t.s_f).unwrap();
            prop_assert!(chain.overall);
        }
    }
}
