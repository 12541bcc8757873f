"""Run bookkeeping for data-acquisition systems.

obk records the lifecycle of data-taking runs. DAQ components publish
start-of-run, end-of-run, log, status and comment messages over a line
oriented socket protocol; the service files them per run in one of two
interchangeable storage backends and serves them back through a query
API, a command line tool and an HTTP logbook.
"""

__version__ = "0.1.0"
