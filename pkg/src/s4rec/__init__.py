"""Sequential recommendation with self-supervised clustering and self-distillation."""
