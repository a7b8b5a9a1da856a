#![no_main]
use libfuzzer_sys::fuzz_target;
use sarith::experiment::{read_csv, render_svg, write_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_csv(data) {
        let mut out = Vec::new();
        if write_csv(&records, &mut out).is_ok() {
            let again = read_csv(out.as_slice()).unwrap();
            assert_eq!(again.len(), records.len());
        }
        let _ = render_svg(&records);
    }
});
