#![no_main]
use junction_hjb::io::{read_field_csv, write_field_csv};
use junction_hjb::solver::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let grid = GridSpec::new(1.0, -0.5, 0.5, 0.5, 0.1).expect("valid grid");
    let Ok(field) = read_field_csv(data, &grid, 2) else {
        return;
    };
    let mut buf = Vec::new();
    write_field_csv(&mut buf, &grid, &field).expect("write to memory");
    assert_eq!(read_field_csv(buf.as_slice(), &grid, 2).expect("round trip"), field);
});
