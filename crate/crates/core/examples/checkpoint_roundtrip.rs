//! Save a checkpoint with metadata, reload it and confirm the encoder
//! produces the same embedding.

use textrec::encoder::{
    encode_item, load_checkpoint, save_checkpoint, Checkpoint, IdFusion, IdSpace, ModelConfig, Parameters,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig {
        vocab_size: 40,
        hidden_dim: 8,
        num_heads: 2,
        ffn_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        max_session_len: 8,
        dropout_rate: 0.0,
        id_fusion: IdFusion::Embed,
    };
    let ids = IdSpace { items: vec!["i1".into(), "i2".into()], users: vec!["u1".into()] };
    let params = Parameters::init_with_ids(&config, ids, 3)?;
    let ckpt = Checkpoint::new(params).with_meta("stage", "demo");
    let path = std::env::temp_dir().join("textrec-demo.ckpt");
    save_checkpoint(&path, &ckpt)?;

    let loaded = load_checkpoint(&path)?;
    let tokens = [3, 9, 12];
    let a = encode_item(&ckpt.params, &tokens, "i1")?;
    let b = encode_item(&loaded.params, &tokens, "i1")?;
    println!("fingerprint {}", ckpt.fingerprint());
    println!("reloaded    {}", loaded.fingerprint());
    println!("meta        {:?}", loaded.meta);
    println!("{} scalars, embeddings identical: {}", loaded.params.num_scalars(), a == b);
    Ok(())
}
