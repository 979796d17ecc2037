#![no_main]

use libfuzzer_sys::fuzz_target;
use tfn_core::data::Image;

fuzz_target!(|data: &[u8]| {
    if let Ok(im) = Image::from_ppm(data) {
        assert_eq!(im.data.len(), im.width * im.height * 3);
        let back = Image::from_ppm(&im.to_ppm()).expect("encoded image decodes");
        assert_eq!(back.data, im.data);
    }
});
