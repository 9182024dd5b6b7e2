"""Pomocné moduly dátovej linky: čistenie, šablóny, generovanie, korpus a metriky."""
