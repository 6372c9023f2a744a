from dkprompt.cli import main

main()
