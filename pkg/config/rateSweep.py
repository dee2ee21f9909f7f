# Latency of every strategy between 50 kbit/s and 10 Mbit/s.
config.name = "rateSweep"
config.sweepVariable = "rate"
config.sweepValues = [5e4, 1e5, 2.5e5, 5e5, 1e6, 2.5e6, 5e6, 1e7]
config.strategies = ["simpleStream", "advancedStream", "fullUpdate", "partialUpdate", "combined"]
config.repetitions = 10
