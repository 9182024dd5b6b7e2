"""Výpočtové jadro: tenzory s autodiff, dekodérový model, rolling cache, LoRA, checkpointy a tréning."""
