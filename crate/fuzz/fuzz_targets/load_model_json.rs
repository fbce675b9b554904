#![no_main]
use libfuzzer_sys::fuzz_target;
use lincde::boost::BoostModel;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(model) = BoostModel::from_json(s) {
        // a model that loads must predict without panicking
        let x = vec![0.0; model.n_features()];
        let _ = model.predict_probs(&x);
        let _ = model.predict_quantiles(&x, &[0.5]);
    }
});
