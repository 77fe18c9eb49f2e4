//! Learnable components: the toy generator, the bit-modulation set, and the
//! watermark codec.

mod hidden;
mod layers;
mod lift;
mod message;
mod modulation;
mod unet;

pub use hidden::{
    decode_logits, hidden_decode, hidden_encode, HiddenCodec, HiddenDecoder, HiddenEncoder, NormConv, DECODER_WIDTH,
    RESIDUAL_BOUND,
};
pub use layers::{Conv, Linear};
pub use lift::{proxy_prior, ViewLift, LIFT_RADIUS};
pub use message::{message_to_tensor, Message, MESSAGE_LENGTHS};
pub use modulation::{
    modulate, tile_block, tile_block_on_tape, ModulationInit, ModulationNet, ModulationSet, SiteSet, BLOCK, COEFF_INIT, INPUT_BLOCK_CHANNELS,
};
pub use unet::{ToyUNet, UNetConfig, Watermark};
