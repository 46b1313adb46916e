from ldlpp.cli import RUN

RUN()
