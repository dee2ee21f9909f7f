# Partial updates of a fixed share of the interior points, every other step.
config.name = "updateSize"
config.pair.server.synthetic.mode = "fixedSize"
config.pair.server.synthetic.probability = 0.5
config.sweepVariable = "updateSizeFraction"
config.sweepValues = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
config.strategies = ["advancedStream", "fullUpdate", "partialUpdate"]
config.repetitions = 10
