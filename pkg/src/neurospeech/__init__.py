"""Speech-BCI decoding toolkit."""
