use proptest::prelude::*;
use rotd::config::parse_config_str;
use rotd::output::{fmt_f64, mean_sd};

proptest! {
    #[test]
    fn float_text_round_trips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        let back: f64 = fmt_f64(v).parse().unwrap();
        if v.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn sd_is_shift_invariant(v in prop::collection::vec(-1e3f64..1e3, 2..30), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (m0, s0) = mean_sd(&v);
        let (m1, s1) = mean_sd(&shifted);
        prop_assert!((m1 - m0 - c).abs() <= 1e-9);
        prop_assert!((s1 - s0).abs() <= 1e-9 * (1.0 + s0));
        prop_assert!(s0 >= 0.0);
    }

    #[test]
    fn unknown_key_line_is_reported(pad in 0usize..6, key in "[a-z]{3,8}_zz") {
        let text = format!("[experiment]\n{}{key} = 1\n", "# c\n".repeat(pad));
        let err = parse_config_str(&text).unwrap_err().to_string();
        let expected = format!("line {}", pad + 2);
        prop_assert!(err.contains(&expected), "{}", err);
    }
}
