//! Number formatting shared by the CSV and text outputs.

/// `x` with 9 significant digits: fixed notation for moderate magnitudes,
/// scientific otherwise. Trailing zeros are kept so columns diff cleanly.
pub fn sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0.00000000".into();
    }
    // round first, then read the exponent of the rounded value
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        format!("{mantissa}e{exp}")
    }
}
