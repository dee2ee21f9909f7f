# Full updates forced with a given probability per step.
config.name = "updateProbability"
config.pair.server.synthetic.mode = "bernoulli"
config.sweepVariable = "updateProbability"
config.sweepValues = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
config.strategies = ["advancedStream", "fullUpdate"]
config.repetitions = 10
