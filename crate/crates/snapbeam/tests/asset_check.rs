use snapbeam::sensing::{detect_peaks, parse_trace_csv};

#[test]
fn bundled_opening_trace_has_the_two_documented_peaks() {
    let text = include_str!("../assets/opening_trace.csv");
    let trace = parse_trace_csv(text).unwrap();
    assert_eq!(trace.len(), 121);
    let peaks = detect_peaks(&trace, 2.0);
    assert_eq!(peaks.len(), 2, "peaks: {peaks:?}");
    assert_eq!(peaks[0].p, 13.0);
    assert_eq!(peaks[1].p, 11.0);
    assert_eq!(peaks[0].t, 30.0);
    assert_eq!(peaks[1].t, 75.0);
    // the ripple rides shallow maxima that prominence filtering must drop
    assert!(detect_peaks(&trace, 0.01).len() > 2);
}
