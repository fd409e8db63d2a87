"""Decision Transformer: tokenization, action codec, model, training and inference."""
