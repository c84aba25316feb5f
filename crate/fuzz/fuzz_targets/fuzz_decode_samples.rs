#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // First two bytes pick the claimed shape so mismatch paths get exercised.
    if data.len() < 2 {
        return;
    }
    let n_channels = (data[0] % 8) as usize;
    let n_samples = data[1] as usize;
    let _ = meapipe::io_store::decode_samples(&data[2..], n_channels, n_samples);
});
