#![no_main]
use libfuzzer_sys::fuzz_target;
use sarith::approx::{ApproxCollection, PsiSpec};
use sarith::sring::PlaceSet;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(spec) = serde_json::from_str::<PsiSpec>(s) else { return };
    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<PsiSpec>(&json).unwrap(), spec);
    let Ok(places) = PlaceSet::new(spec.finite.keys().copied()) else { return };
    for (m, n) in [(1, 1), (2, 1)] {
        if let Ok(psi) = ApproxCollection::from_json(s, &places, m, n) {
            let _ = psi.integral_diverges();
        }
    }
});
