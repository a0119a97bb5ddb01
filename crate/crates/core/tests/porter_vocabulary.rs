use kpagg_core::textnorm::porter::stem;

#[test]
fn agrees_with_reference_vocabulary() {
    let voc = include_str!("data/porter_voc.txt");
    let expected = include_str!("data/porter_output.txt");
    let pairs: Vec<(&str, &str)> = voc.lines().zip(expected.lines()).collect();
    assert_eq!(pairs.len(), voc.lines().count());
    assert!(pairs.len() > 20_000);

    let mismatches: Vec<_> = pairs.iter().filter(|(w, s)| stem(w) != *s).collect();
    let agreement = 1.0 - mismatches.len() as f64 / pairs.len() as f64;
    assert!(
        agreement >= 0.999,
        "agreement {agreement:.5}, first mismatches: {:?}",
        &mismatches[..mismatches.len().min(10)]
    );
}
