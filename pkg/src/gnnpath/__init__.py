"""Graph-attention learning-path recommender trained with REINFORCE."""
