#![no_main]

use libfuzzer_sys::fuzz_target;
use patrol::nn::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok((model, manifest)) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model, manifest.episode);
        let (again, _) = decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.actor_params, model.actor_params);
        assert_eq!(again.critic_params, model.critic_params);
    }
});
