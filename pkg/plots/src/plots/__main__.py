from plots.main import run

run()
